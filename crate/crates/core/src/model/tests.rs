use super::*;
use crate::nn::testutil::*;
use crate::nn::{flatten, num_params, zeros_like};
use rand::Rng;

fn example(rng: &mut ChaCha8Rng, cfg: &ModelConfig, t: usize, speaker: usize) -> TrainingExample {
    let content = FrameMatrix::new(probe_weights(rng, t, cfg.content_dim), 0.01, FeatureKind::Content).unwrap();
    let v = cfg.prosody.codebook_size;
    let indices = IndexSequence::new((0..t).map(|_| [rng.gen_range(0..v), rng.gen_range(0..v)]).collect(), v).unwrap();
    let split = (t / 2).max(1);
    let alignment = Some(FramePhoneMap::from_lengths(&[split, t - split]).unwrap());
    let mel = FrameMatrix::new(probe_weights(rng, t, cfg.n_mels), 0.01, FeatureKind::Mel).unwrap();
    TrainingExample {
        content,
        indices,
        alignment,
        speaker,
        mel,
    }
}

fn settings(mode: ProsodyMode) -> ProsodySettings {
    ProsodySettings::inference(mode, 2)
}

#[test]
fn full_model_gradients_every_mode() {
    let cfg = ModelConfig::test_config();
    for (k, mode) in [ProsodyMode::None, ProsodyMode::Base, ProsodyMode::Rdpf, ProsodyMode::Adpf]
        .into_iter()
        .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + k as u64);
        let model = VcModel::init(&cfg, 5 + k as u64).unwrap();
        let ex = example(&mut rng, &cfg, 4, 1);
        let target = ex.mel.data().clone();
        let probe = probe_weights(&mut rng, 4, cfg.n_mels);
        let (_, cache) = model.forward_train(&ex.input(), target.view(), settings(mode), None).unwrap();
        let mut grad = zeros_like(&model);
        model.backward(&cache, probe.view(), &mut grad);
        let worst = check_params(
            &model,
            &grad,
            |m| (m.forward_train(&ex.input(), target.view(), settings(mode), None).unwrap().0 * &probe).sum(),
            1e-6,
        );
        assert!(worst < 1e-4, "{mode}: worst relative error {worst}");
    }
}

#[test]
fn mae_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = probe_weights(&mut rng, 3, 4);
    let b = probe_weights(&mut rng, 3, 4);
    let (_, g) = mae(a.view(), b.view());
    for i in 0..3 {
        for j in 0..4 {
            let mut p = a.clone();
            p[[i, j]] += 1e-7;
            let mut m = a.clone();
            m[[i, j]] -= 1e-7;
            let num = (mae(p.view(), b.view()).0 - mae(m.view(), b.view()).0) / 2e-7;
            assert!(rel_err(num, g[[i, j]]) < 1e-5);
        }
    }
}

#[test]
fn census_covers_every_parameter() {
    let model = VcModel::init(&ModelConfig::test_config(), 0).unwrap();
    let census = model.census();
    assert_eq!(census.iter().map(|c| c.0).collect::<Vec<_>>(), PARAM_GROUPS);
    assert!(census.iter().all(|c| c.1 > 0));
    assert_eq!(census.iter().map(|c| c.1).sum::<usize>(), num_params(&model));
}

#[test]
fn default_dimensions() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.content_out_dim(), 512);
    assert_eq!(cfg.cond_dim(), 512 + 4 + 64);
}

#[test]
fn speaker_gradient_touches_only_its_row() {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = VcModel::init(&cfg, 3).unwrap();
    let ex = example(&mut rng, &cfg, 6, 2);
    let target = ex.mel.data().clone();
    let (pred, cache) = model.forward_train(&ex.input(), target.view(), settings(ProsodyMode::None), None).unwrap();
    let (_, d) = mae(pred.view(), target.view());
    let mut grad = zeros_like(&model);
    model.backward(&cache, d.view(), &mut grad);
    for r in 0..cfg.num_speakers {
        let any = grad.speaker_table.table.row(r).iter().any(|&v| v != 0.0);
        assert_eq!(any, r == 2);
    }
}

#[test]
fn speaker_out_of_range_rejected() {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = VcModel::init(&cfg, 3).unwrap();
    let mut ex = example(&mut rng, &cfg, 6, 0);
    ex.speaker = 3;
    assert!(matches!(model.streams(&ex.input(), settings(ProsodyMode::None)), Err(Error::Contract(_))));
}

#[test]
fn adpf_without_alignment_is_missing_input() {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = VcModel::init(&cfg, 3).unwrap();
    let mut ex = example(&mut rng, &cfg, 6, 0);
    ex.alignment = None;
    let err = model.streams(&ex.input(), settings(ProsodyMode::Adpf)).unwrap_err();
    assert!(matches!(err, Error::MissingInput(_)));
    assert!(err.to_string().contains("alignment"));
}

#[test]
fn zeroed_prosody_ignores_indices() {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = VcModel::init(&cfg, 3).unwrap();
    let a = example(&mut rng, &cfg, 7, 1);
    let mut b = a.clone();
    b.indices = example(&mut rng, &cfg, 7, 1).indices;
    let sa = model.streams(&a.input(), settings(ProsodyMode::None)).unwrap();
    let sb = model.streams(&b.input(), settings(ProsodyMode::None)).unwrap();
    assert_eq!(sa, sb);
    let ma = model.decode_streams(&sa, 0.01).unwrap();
    let mb = model.decode_streams(&sb, 0.01).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn batch_order_does_not_change_outputs() {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = VcModel::init(&cfg, 3).unwrap();
    let data: Vec<_> = (0..3).map(|i| example(&mut rng, &cfg, 5 + i, i)).collect();
    let forward: Vec<_> = data
        .iter()
        .map(|e| model.streams(&e.input(), settings(ProsodyMode::Adpf)).unwrap())
        .collect();
    for (i, e) in data.iter().enumerate().rev() {
        assert_eq!(model.streams(&e.input(), settings(ProsodyMode::Adpf)).unwrap(), forward[i]);
    }
}

#[test]
fn lr_schedule() {
    let cfg = TrainingConfig::default();
    assert_eq!(lr_at(&cfg, 0), 0.001);
    assert_eq!(lr_at(&cfg, 9), 0.001);
    assert_eq!(lr_at(&cfg, 10), 0.001 * 0.7);
    assert_eq!(lr_at(&cfg, 29), 0.001 * 0.7 * 0.7);
}

fn tiny_training(mode: ProsodyMode) -> (Vec<TrainingExample>, TrainingConfig) {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<_> = (0..5).map(|i| example(&mut rng, &cfg, 6 + i, i % 3)).collect();
    let tc = TrainingConfig {
        epochs: 3,
        batch_size: 2,
        seed: 11,
        prosody_mode: mode,
        tau: 3,
        ..TrainingConfig::default()
    };
    (data, tc)
}

#[test]
fn training_is_deterministic() {
    for mode in [ProsodyMode::Rdpf, ProsodyMode::Adpf] {
        let (data, tc) = tiny_training(mode);
        let mut logs_a = Vec::new();
        let a = train(&data, &ModelConfig::test_config(), &tc, &mut |l| logs_a.push(*l)).unwrap();
        let mut logs_b = Vec::new();
        let b = train(&data, &ModelConfig::test_config(), &tc, &mut |l| logs_b.push(*l)).unwrap();
        assert_eq!(logs_a, logs_b);
        assert_eq!(flatten(&a.model), flatten(&b.model));
        assert_eq!(logs_a.len(), 3);
        assert_eq!(a.epoch, 3);
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (data, tc) = tiny_training(ProsodyMode::Base);
    let full = train(&data, &ModelConfig::test_config(), &tc, &mut |_| {}).unwrap();
    let short = TrainingConfig { epochs: 1, ..tc.clone() };
    let mut ckpt = train(&data, &ModelConfig::test_config(), &short, &mut |_| {}).unwrap();
    ckpt.training.epochs = 3;
    train_more(&mut ckpt, &data, &mut |_| {}).unwrap();
    assert_eq!(flatten(&ckpt.model), flatten(&full.model));
}

#[test]
fn full_batch_loss_is_order_invariant() {
    let (data, tc) = tiny_training(ProsodyMode::Base);
    let tc = TrainingConfig {
        batch_size: data.len(),
        epochs: 1,
        prenet_dropout: 0.0,
        ..tc
    };
    let mut la = Vec::new();
    train(&data, &ModelConfig::test_config(), &tc, &mut |l| la.push(l.loss)).unwrap();
    let mut rev = data.clone();
    rev.reverse();
    let mut lb = Vec::new();
    train(&data, &ModelConfig::test_config(), &tc, &mut |l| lb.push(l.loss)).unwrap();
    let mut lc = Vec::new();
    let mut sh = TrainingConfig { seed: 99, ..tc.clone() };
    sh.seed = tc.seed;
    train(&rev, &ModelConfig::test_config(), &sh, &mut |l| lc.push(l.loss)).unwrap();
    assert_eq!(la, lb);
    assert!((la[0] - lc[0]).abs() < 1e-12);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let (data, tc) = tiny_training(ProsodyMode::None);
    let mut ckpt = train(&data, &ModelConfig::test_config(), &TrainingConfig { epochs: 1, ..tc.clone() }, &mut |_| {}).unwrap();
    ckpt.model.decoder.proj.b[0] = f64::NAN;
    ckpt.training.epochs = 2;
    match train_more(&mut ckpt, &data, &mut |_| {}) {
        Err(Error::NonFiniteLoss { epoch, batch, utterances }) => {
            assert_eq!((epoch, batch), (1, 0));
            assert_eq!(utterances.len(), 2);
            assert!(utterances.windows(2).all(|w| w[0] < w[1]));
        }
        other => panic!("expected non-finite loss, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (data, tc) = tiny_training(ProsodyMode::Adpf);
    let ckpt = train(&data, &ModelConfig::test_config(), &tc, &mut |_| {}).unwrap();
    let bytes = ckpt.encode();
    assert_eq!(&bytes[..4], b"PVCK");
    let back = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.encode(), bytes);
    assert_eq!(back.epoch, 3);
    assert_eq!(back.training, tc);
    assert_eq!(back.fingerprint(), ckpt.fingerprint());
}

#[test]
fn checkpoint_rejects_tampering() {
    let (data, tc) = tiny_training(ProsodyMode::None);
    let ckpt = train(&data, &ModelConfig::test_config(), &TrainingConfig { epochs: 1, ..tc }, &mut |_| {}).unwrap();
    let bytes = ckpt.encode();
    assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::decode(&bad).is_err());
    // flip a seed digit inside the JSON config block
    let pos = bytes.windows(7).position(|w| w == b"\"seed\":").unwrap() + 7;
    let mut bad = bytes.clone();
    bad[pos] = if bad[pos] == b'1' { b'2' } else { b'1' };
    assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format(_))));
}

#[test]
fn fingerprint_tracks_config() {
    let (data, tc) = tiny_training(ProsodyMode::None);
    let a = train(&data, &ModelConfig::test_config(), &TrainingConfig { epochs: 1, ..tc.clone() }, &mut |_| {}).unwrap();
    let mut b = a.clone();
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.training.lr0 = 0.002;
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn free_decoding_is_finite_on_silence() {
    let cfg = ModelConfig::test_config();
    let model = VcModel::init(&cfg, 1).unwrap();
    let content = FrameMatrix::new(Array2::zeros((30, cfg.content_dim)), 0.01, FeatureKind::Content).unwrap();
    let indices = IndexSequence::new(vec![[0, 0]; 30], cfg.prosody.codebook_size).unwrap();
    let input = ModelInput {
        content: &content,
        indices: &indices,
        alignment: None,
        speaker: 0,
    };
    let s = model.streams(&input, settings(ProsodyMode::Base)).unwrap();
    let mel = model.decode_streams(&s, 0.01).unwrap();
    assert_eq!(mel.num_frames(), 30);
}
