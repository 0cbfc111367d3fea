"""Smoke test for the pysemcom extension.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import pysemcom as sc


def main():
    lines = sc.toy_corpus(seed=3, n_lines=50, min_len=4, max_len=10)
    assert len(lines) == 50

    vocab = sc.Vocabulary.build(lines)
    ids = vocab.encode(lines[0], 16)
    assert ids[0] == 1 and ids[-1] == 2
    assert vocab.decode(ids) == lines[0]

    ch = sc.Channel("awgn", 10.0)
    assert abs(ch.noise_variance - 0.1) < 1e-12
    y = ch.transmit([[1.0, -1.0], [0.5, 0.5]], seed=1)
    assert len(y) == 2 and len(y[0]) == 2

    codec = sc.Codec(vocab, seed=1, embed_dim=16, n_layers=1, ffn_dim=32, max_distill=3, max_len=16)
    symbols, enc_steps = codec.encode(lines[0])
    assert len(symbols) == len(ids) and 1 <= enc_steps <= 3
    text, dec_steps = codec.decode(symbols)
    assert isinstance(text, str) and 1 <= dec_steps <= 3
    out = codec.transmit(lines[0], sc.Channel("fif", 5.0), seed=2)
    assert set(out) == {"text", "wer", "encoder_steps", "decoder_steps"}
    codec.threshold = 0.0
    assert codec.encode(lines[0])[1] == 1

    assert sc.wer("a b c d", "a x c d") == 0.25
    assert sc.bleu(["the cat sat on the mat"], "the cat sat on the mat") == 1.0
    corpus = [["a cat sits on the mat"], ["two birds fly over the lake"], ["green frogs sing loudly"]]
    assert abs(sc.cider_d(corpus[2], "green frogs sing loudly", corpus) - 10.0) < 1e-9
    assert sc.cider_d(corpus[1], "green frogs", corpus) == 0.0

    data = [(3 * i + 5) % 32 for i in range(23)]
    cw = sc.rs_encode(data)
    assert cw[23:] == [23, 16, 13, 30, 19, 15, 9, 5]
    cw[0] ^= 7
    cw[30] ^= 1
    assert sc.rs_decode(cw) == (data, True)
    decoded, wer = sc.classical_transmit("hello world", sc.Channel("awgn", 12.0), seed=0)
    assert decoded == "hello world" and wer == 0.0

    print("pysemcom smoke test passed")


if __name__ == "__main__":
    main()
