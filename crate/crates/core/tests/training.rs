use semcom::autograd::ParamStore;
use semcom::channel::ChannelSpec;
use semcom::codec::{semantic_decode, semantic_encode, CodecConfig, CodecState, Mode};
use semcom::corpus::{build_vocab, content_ids, encode_text, generate_toy_corpus, generate_toy_images, TokenSequence, Vocabulary};
use semcom::metrics::{metric_by_name, wer, IdfTable};
use semcom::rng;
use semcom::training::{
    assign_sentence_reward, bandit_gradient_samples, reconstruction_mse, rollout_sentence, sample_draws, train_bandit,
    train_ce, train_ssc_d, train_ssc_d_image, train_ssc_nd_sentence, Critic, ImageCodec, ImageCodecConfig, TrainConfig,
};
use semcom::Error;

fn small_codec() -> CodecConfig {
    CodecConfig {
        embed_dim: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        max_distill: 2,
        max_len: 12,
        ..CodecConfig::default()
    }
}

fn toy(lines: usize, max_len: usize) -> (Vocabulary, Vec<TokenSequence>) {
    let text = generate_toy_corpus(5, lines, (4, max_len - 2), 40).unwrap();
    let vocab = build_vocab(&text, 1).unwrap();
    let msgs = text.iter().map(|l| encode_text(l, &vocab, max_len).unwrap()).collect();
    (vocab, msgs)
}

fn snapshot(store: &ParamStore) -> Vec<(String, Vec<f64>)> {
    store.iter().map(|(n, m)| (n.to_string(), m.iter().copied().collect())).collect()
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let cfg = small_codec();
    let (vocab, msgs) = toy(20, cfg.max_len);
    let mut state = CodecState::new(&cfg, vocab.len(), 1).unwrap();
    let before = snapshot(&state.params);
    let train = TrainConfig { steps: 0, ..TrainConfig::default() };
    let log = train_ce(&mut state, &ChannelSpec::awgn(10.0), &msgs, &train, false).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(snapshot(&state.params), before);

    let mut critic = Critic::new(cfg.embed_dim, 8, 1, 1);
    let idf = IdfTable::from_sentences(&msgs.iter().map(|m| m.content().to_vec()).collect::<Vec<_>>()).unwrap();
    let metric = metric_by_name("cider_d", Some(&idf)).unwrap();
    train_ssc_nd_sentence(&mut state, &mut critic, &ChannelSpec::awgn(10.0), &msgs, metric.as_ref(), &train, false)
        .unwrap();
    assert_eq!(snapshot(&state.params), before);
}

#[test]
fn ce_training_is_deterministic() {
    let cfg = small_codec();
    let (vocab, msgs) = toy(30, cfg.max_len);
    let train = TrainConfig {
        steps: 15,
        batch_size: 4,
        seed: 7,
        ..TrainConfig::default()
    };
    let run = || {
        let mut s = CodecState::new(&cfg, vocab.len(), 3).unwrap();
        train_ce(&mut s, &ChannelSpec::fif(5.0), &msgs, &train, false).unwrap().losses()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.iter().all(|l| l.is_finite()));
}

#[test]
fn noiseless_ce_memorises_a_small_corpus() {
    let cfg = CodecConfig {
        embed_dim: 32,
        ffn_dim: 64,
        ..small_codec()
    };
    let (vocab, msgs) = toy(50, cfg.max_len);
    let mut state = CodecState::new(&cfg, vocab.len(), 2).unwrap();
    let train = TrainConfig {
        steps: 2000,
        batch_size: 10,
        lr: 3e-3,
        ..TrainConfig::default()
    };
    let channel = ChannelSpec::awgn(300.0);
    train_ce(&mut state, &channel, &msgs, &train, false).unwrap();
    let mut r = rng::seeded(0);
    let mut total = 0.0;
    for m in &msgs {
        let enc = semantic_encode(m, &state, Mode::Infer).unwrap();
        let y = channel.draw(enc.symbols.shape().0, enc.symbols.shape().1, &mut r).apply(&enc.symbols).unwrap();
        let dec = semantic_decode(&y, &state, Mode::Infer).unwrap();
        let hyp = content_ids(&dec.tokens);
        total += wer(m.content(), hyp).unwrap();
    }
    let mean = total / msgs.len() as f64;
    assert!(mean < 0.05, "training-set WER {mean}");
}

#[test]
fn ssc_d_refuses_non_differentiable_metrics() {
    let cfg = small_codec();
    let (vocab, msgs) = toy(10, cfg.max_len);
    let mut state = CodecState::new(&cfg, vocab.len(), 1).unwrap();
    let metric = metric_by_name("bleu", None).unwrap();
    let err = train_ssc_d(&mut state, &ChannelSpec::awgn(10.0), &msgs, metric.as_ref(), &TrainConfig::default(), false)
        .unwrap_err();
    assert!(matches!(err, Error::NotDifferentiable(_)));
}

#[test]
fn ssc_d_image_reconstruction_improves_tenfold() {
    let images = generate_toy_images(4, 64, (8, 8, 1)).unwrap();
    let cfg = ImageCodecConfig { hidden: 64, symbols: 32 };
    let mut codec = ImageCodec::new(&cfg, (8, 8, 1), 1).unwrap();
    let channel = ChannelSpec::awgn(300.0);
    let shapes = vec![(1, cfg.symbols); images.len()];
    let draws = sample_draws(&channel, None, &shapes, &mut rng::seeded(9));
    let before = reconstruction_mse(&codec, &images, &draws).unwrap();
    let train = TrainConfig {
        steps: 1500,
        batch_size: 16,
        lr: 3e-3,
        metric: "neg_mse".into(),
        ..TrainConfig::default()
    };
    let metric = metric_by_name("neg_mse", None).unwrap();
    train_ssc_d_image(&mut codec, &channel, &images, metric.as_ref(), &train, false).unwrap();
    let after = reconstruction_mse(&codec, &images, &draws).unwrap();
    assert!(after * 10.0 <= before, "mse {before} -> {after}");
}

#[test]
fn near_zero_temperature_sampling_is_greedy() {
    let cfg = small_codec();
    let (vocab, msgs) = toy(10, cfg.max_len);
    let state = CodecState::new(&cfg, vocab.len(), 4).unwrap();
    for m in msgs.iter().take(5) {
        let enc = semantic_encode(m, &state, Mode::Infer).unwrap();
        let greedy = semantic_decode(&enc.symbols, &state, Mode::Infer).unwrap().tokens;
        let ep = rollout_sentence(&state, &enc.symbols, 1e-9, &mut rng::seeded(1)).unwrap();
        assert_eq!(ep.actions, greedy);
    }
}

#[test]
fn matching_sample_earns_full_cider_reward() {
    let cfg = small_codec();
    let (vocab, msgs) = toy(20, cfg.max_len);
    let refs: Vec<Vec<u32>> = msgs.iter().map(|m| m.content().to_vec()).collect();
    let idf = IdfTable::from_sentences(&refs).unwrap();
    let metric = metric_by_name("cider_d", Some(&idf)).unwrap();
    let state = CodecState::new(&cfg, vocab.len(), 4).unwrap();
    let enc = semantic_encode(&msgs[0], &state, Mode::Infer).unwrap();
    let mut ep = rollout_sentence(&state, &enc.symbols, 1.0, &mut rng::seeded(2)).unwrap();
    // overwrite the sampled tokens with the reference itself
    ep.actions = msgs[0].ids()[1..].to_vec();
    let n = ep.actions.len();
    ep.states = vec![Vec::new(); n];
    ep.logprobs = vec![0.0; n];
    let ep = assign_sentence_reward(ep, &refs[..1], metric.as_ref(), 1.0).unwrap();
    let expected = idf.cider_d(&refs[..1], &refs[0]);
    assert!((expected - 10.0).abs() < 1e-9);
    assert!(ep.returns.iter().all(|&g| (g - expected).abs() < 1e-12));
}

#[test]
fn bandit_converges_and_critic_tracks_value() {
    let cfg = TrainConfig {
        lr: 0.05,
        batch_size: 8,
        entropy_coef: 0.0,
        critic_hidden: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train_bandit(&cfg, 2000).unwrap();
    let hit = out.prob_curve.iter().position(|&p| p > 0.95);
    assert!(hit.is_some(), "final p = {}", out.prob_optimal);
    assert!((out.value - out.prob_optimal).abs() < 0.05, "value {} vs p {}", out.value, out.prob_optimal);
}

#[test]
fn baseline_keeps_gradient_mean_and_cuts_variance() {
    let (plain, based) = bandit_gradient_samples(0.3, 20_000, 5);
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var, (var / n).sqrt())
    };
    let (m0, v0, se0) = stats(&plain);
    let (m1, v1, se1) = stats(&based);
    assert!((m0 - m1).abs() < 3.0 * (se0 * se0 + se1 * se1).sqrt());
    assert!(v1 < v0);
}
