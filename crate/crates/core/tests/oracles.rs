//! Checks against the independent oracles in `tests/oracles/`.

#[path = "oracles/values.rs"]
mod values;

use semcom::baselines::{generator_poly, rs_decode, rs_encode, uncoded_bpsk_ber, Gf32, RsCode};
use semcom::channel::ChannelSpec;
use semcom::corpus::ImageMessage;
use semcom::metrics::{bleu, mse, mse_gain, wer, IdfTable};
use semcom::rng;
use statrs::distribution::{ContinuousCDF, Normal};
use values::{cider_corpus, rs_data, words as w, CIDER_CASES, RS_GENERATOR, RS_PARITY};

#[test]
fn cider_d_matches_reference_scorer() {
    let corpus = cider_corpus();
    let idf = IdfTable::from_documents(&corpus).unwrap();
    for (name, item, hyp, expect) in CIDER_CASES {
        let got = idf.cider_d(&corpus[item], &w(hyp));
        assert!((got - expect).abs() < 1e-6, "{name}: {got} vs {expect}");
    }
}

#[test]
fn bleu_hand_values() {
    let r = vec![w("the cat sat on the mat")];
    let h = w("the the the the the the");
    // clipped p1 = 2/6, no higher-order matches: 1/6, 1/5, 1/4
    assert!((bleu(&r, &h, 4) - 360f64.powf(-0.25)).abs() < 1e-6);
    let short = w("the cat sat on");
    // every n-gram matches, only the brevity penalty exp(1 - 6/4) remains
    assert!((bleu(&r, &short, 4) - (-0.5f64).exp()).abs() < 1e-6);
    assert_eq!(bleu(&r, &r[0], 4), 1.0);
}

#[test]
fn wer_and_mse_hand_values() {
    assert_eq!(wer(&w("a b c d"), &w("a x c d")).unwrap(), 0.25);
    assert_eq!(wer(&w("a b c d"), &[]).unwrap(), 1.0);
    let shape = (2, 3, 1);
    let zeros = ImageMessage::filled(shape, 0.0);
    assert_eq!(mse(&zeros, &ImageMessage::filled(shape, 1.0)).unwrap(), 1.0);
    assert_eq!(mse(&zeros, &ImageMessage::filled(shape, 0.5)).unwrap(), 0.25);
    let img_t = ImageMessage::filled(shape, 0.5f64.sqrt());
    let img_t1 = ImageMessage::filled(shape, 0.3f64.sqrt());
    assert!((mse_gain(&zeros, &img_t, &img_t1).unwrap() - 0.2).abs() < 1e-12);
    assert!(mse_gain(&zeros, &img_t1, &img_t).unwrap() < 0.0);
}

#[test]
fn rs_parity_matches_long_division() {
    let code = RsCode::default();
    assert_eq!(generator_poly(&Gf32::new(), &code), RS_GENERATOR);
    let data = rs_data();
    let cw = rs_encode(&data, &code).unwrap();
    assert_eq!(&cw[..23], &data[..]);
    assert_eq!(&cw[23..], &RS_PARITY);
    assert_eq!(rs_decode(&cw, &code).unwrap(), (data, true));
}

#[test]
fn bpsk_ber_matches_q_function() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let n_bits = 400_000;
    for snr_db in [0.0, 4.0] {
        let snr = 10f64.powf(snr_db / 10.0);
        let q = 1.0 - normal.cdf((2.0 * snr).sqrt());
        let mut r = rng::seeded(3);
        let ber = uncoded_bpsk_ber(&ChannelSpec::awgn(snr_db), n_bits, &mut r).unwrap();
        let se = (q * (1.0 - q) / n_bits as f64).sqrt();
        assert!((ber - q).abs() < 4.0 * se, "snr {snr_db}: ber {ber} vs Q {q}");
    }
}
