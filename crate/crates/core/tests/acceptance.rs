//! Acceptance criteria 1-10, one result line each.
//!
//! ```text
//! cargo test -p pvc-core --test acceptance            # all
//! cargo test -p pvc-core --test acceptance -- 6 7     # selected
//! ```

use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvc_core::alignment::{parse_alignment_str, to_tsv, FramePhoneMap, RawSegment};
use pvc_core::eval::{cosine, far_from_scores, prosody_consistency, ClassifierNet};
use pvc_core::features::{
    decode_frame_matrix, encode_frame_matrix, mel_spectrogram, ContentProjection, F0Track, FeatureConfig, FeatureKind,
    FrameMatrix, UtteranceFeatures,
};
use pvc_core::model::{
    lr_at, teacher_forced_loss, train, Checkpoint, ModelConfig, ModelInput, ProsodyMode, ProsodySettings, TrainingConfig,
    TrainingExample, VcModel, PARAM_GROUPS,
};
use pvc_core::nn::{flatten, unflatten, zeros_like, Linear, Params};
use pvc_core::prosody::{adpf, rdpf, AdpfParams, RdpfMode};
use pvc_core::quantizer::{IndexSequence, ProductCodebook};
use pvc_core::synth::{synth_corpus, SynthConfig};
use pvc_core::toy::{run_mode, ToyConfig, ToyData};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

fn prosody(rng: &mut ChaCha8Rng, t: usize) -> FrameMatrix {
    FrameMatrix::new(mat(rng, t, 4), 0.01, FeatureKind::Prosody).unwrap()
}

/// Random composition of `t` into `n` positive parts.
fn lengths(rng: &mut ChaCha8Rng, t: usize, n: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, t - 1, n - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    cuts.push(t);
    let mut prev = 0;
    cuts.into_iter()
        .map(|c| {
            let l = c - prev;
            prev = c;
            l
        })
        .collect()
}

fn rdpf_timestamps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t = rng.gen_range(1..=512);
        let tau = rng.gen_range(1..=t);
        let mut expected: Vec<usize> = (1..).map(|k| k * tau - 1).take_while(|&i| i < t).collect();
        if t % tau != 0 {
            expected.push(t - 1);
        }
        let p = prosody(&mut rng, t);
        let f = rdpf(&p, tau, RdpfMode::Deterministic, 0).map_err(|e| e.to_string())?;
        check(f.selected_frames() == expected, || format!("T={t} tau={tau}: selected {:?}", f.selected_frames()))?;
        let y = f.matrix().data();
        for (b, &k) in expected.iter().enumerate() {
            for row in b * tau..((b + 1) * tau).min(t) {
                check(y.row(row) == p.data().row(k), || format!("T={t} tau={tau}: row {row} is not row {k}"))?;
            }
        }
    }
    Ok("200 random (T, tau) pairs, selection and piecewise-constant output exact".into())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-loop GRU over every frame from a zero state.
fn gru_oracle(params: &AdpfParams, p: &Array2<f64>) -> Vec<Vec<f64>> {
    let g = &params.gru;
    let hd = g.w_h.nrows();
    let mut h = vec![0.0; hd];
    let mut states = Vec::new();
    for t in 0..p.nrows() {
        let mut next = vec![0.0; hd];
        for j in 0..hd {
            let gate = |k: usize, hh: &[f64]| {
                let mut x = g.b_x[k * hd + j];
                for i in 0..p.ncols() {
                    x += p[[t, i]] * g.w_x[[i, k * hd + j]];
                }
                let mut r = g.b_h[k * hd + j];
                for (i, hv) in hh.iter().enumerate() {
                    r += hv * g.w_h[[i, k * hd + j]];
                }
                (x, r)
            };
            let (xr, hr) = gate(0, &h);
            let (xz, hz) = gate(1, &h);
            let (xn, hn) = gate(2, &h);
            let r = sigmoid(xr + hr);
            let z = sigmoid(xz + hz);
            let n = (xn + r * hn).tanh();
            next[j] = (1.0 - z) * n + z * h[j];
        }
        h = next;
        states.push(h.clone());
    }
    states
}

fn adpf_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let t = rng.gen_range(1..=256);
        let n = rng.gen_range(1..=t.min(20));
        let lens = lengths(&mut rng, t, n);
        let map = FramePhoneMap::from_lengths(&lens).unwrap();
        let params = AdpfParams::init(case);
        let p = prosody(&mut rng, t);
        let f = adpf(&p, &map, &params).map_err(|e| e.to_string())?;
        let y = f.matrix().data();
        let states = gru_oracle(&params, p.data());
        let mut start = 0;
        for (k, &l) in lens.iter().enumerate() {
            let last = start + l - 1;
            check(f.selected_frames()[k] == last, || format!("case {case}: phone {k} keeps {}", f.selected_frames()[k]))?;
            for row in start..=last {
                check(y.row(row) == y.row(last), || format!("case {case}: phone {k} not constant"))?;
                for (j, &v) in states[last].iter().enumerate() {
                    worst = worst.max((y[[row, j]] - v).abs());
                }
            }
            start += l;
        }
        // prefix causality: a cut at a phone boundary sees none of the later frames
        let cut_phone = rng.gen_range(0..n);
        let cut: usize = lens[..=cut_phone].iter().sum();
        let head = FrameMatrix::new(p.data().slice(s![..cut, ..]).to_owned(), 0.01, FeatureKind::Prosody).unwrap();
        let head_map = FramePhoneMap::from_lengths(&lens[..=cut_phone]).unwrap();
        let fh = adpf(&head, &head_map, &params).map_err(|e| e.to_string())?;
        check(fh.matrix().data() == y.slice(s![..cut, ..]), || format!("case {case}: prefix of {cut} frames differs"))?;
    }
    check(worst <= 1e-6, || format!("max deviation from scalar oracle {worst:e} > 1e-6"))?;
    Ok(format!(
        "200 instances: piecewise constant, prefix-causal, max deviation from scalar oracle {worst:.1e} (tol 1e-6)"
    ))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Worst central-difference relative error per top-level parameter group.
fn fd_by_group<P: Params + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> Vec<(String, f64)> {
    let base = flatten(params);
    let grad = flatten(analytic);
    let mut names = Vec::new();
    params.visit("", &mut |name, _, v| {
        let group = name.split('.').next().unwrap_or(name).to_string();
        names.extend(std::iter::repeat_n(group, v.len()));
    });
    let mut probe = params.clone();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let eps = 1e-6;
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] += eps;
        unflatten(&mut probe, &v);
        let up = loss(&probe);
        v[i] -= 2.0 * eps;
        unflatten(&mut probe, &v);
        let down = loss(&probe);
        let e = rel_err((up - down) / (2.0 * eps), grad[i]);
        match worst.iter_mut().find(|w| w.0 == names[i]) {
            Some(w) => w.1 = w.1.max(e),
            None => worst.push((names[i].clone(), e)),
        }
    }
    worst
}

fn example(rng: &mut ChaCha8Rng, cfg: &ModelConfig, t: usize, speaker: usize) -> TrainingExample {
    let v = cfg.prosody.codebook_size;
    let lens = lengths(rng, t, 2.min(t));
    TrainingExample {
        content: FrameMatrix::new(mat(rng, t, cfg.content_dim), 0.01, FeatureKind::Content).unwrap(),
        indices: IndexSequence::new((0..t).map(|_| [rng.gen_range(0..v), rng.gen_range(0..v)]).collect(), v).unwrap(),
        alignment: Some(FramePhoneMap::from_lengths(&lens).unwrap()),
        speaker,
        mel: FrameMatrix::new(mat(rng, t, cfg.n_mels), 0.01, FeatureKind::Mel).unwrap(),
    }
}

fn gradients() -> Outcome {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut report = Vec::new();
    let mut fail = Vec::new();
    for mode in [ProsodyMode::Rdpf, ProsodyMode::Adpf] {
        let model = VcModel::init(&cfg, 7).map_err(|e| e.to_string())?;
        let ex = example(&mut rng, &cfg, 8, 1);
        let target = ex.mel.data().clone();
        let upstream = mat(&mut rng, 8, cfg.n_mels);
        let settings = ProsodySettings::inference(mode, 3);
        let (_, cache) = model.forward_train(&ex.input(), target.view(), settings, None).unwrap();
        let mut grad = zeros_like(&model);
        model.backward(&cache, upstream.view(), &mut grad);
        let worst = fd_by_group(&model, &grad, |m| {
            (m.forward_train(&ex.input(), target.view(), settings, None).unwrap().0 * &upstream).sum()
        });
        for (g, e) in worst {
            // rdpf mode leaves the adpf recurrence untouched
            if mode == ProsodyMode::Rdpf && g == "adpf" {
                continue;
            }
            if e >= 1e-4 {
                fail.push(format!("{mode}/{g} {e:.1e}"));
            }
            report.push(format!("{mode}/{g} {e:.0e}"));
        }
    }
    check(
        PARAM_GROUPS.iter().all(|g| report.iter().any(|r| r.split_once('/').is_some_and(|(_, rest)| rest.starts_with(g)))),
        || "a parameter group was not checked".into(),
    )?;

    let mut net = ClassifierNet {
        frame: Linear::new(6, 5, &mut rng),
        out: Linear::new(5, 3, &mut rng),
    };
    net.frame.b.mapv_inplace(|b| b + 0.5);
    let x = mat(&mut rng, 8, 6);
    let mut grad = zeros_like(&net);
    net.loss_grad(&x, 2, &mut grad);
    for (g, e) in fd_by_group(&net, &grad, |n| n.loss_grad(&x, 2, &mut zeros_like(n))) {
        if e >= 1e-4 {
            fail.push(format!("classifier/{g} {e:.1e}"));
        }
        report.push(format!("classifier/{g} {e:.0e}"));
    }
    check(fail.is_empty(), || format!("relative error >= 1e-4: {}", fail.join(", ")))?;
    Ok(format!("worst relative error per group (tol 1e-4): {}", report.join(", ")))
}

fn quantizer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let n = rng.gen_range(40..200);
        let d = 2 * rng.gen_range(1..6);
        let k = rng.gen_range(2..12);
        let data = FrameMatrix::new(mat(&mut rng, n, d), 0.01, FeatureKind::Mel).unwrap();
        let (_, rep) = ProductCodebook::train(&data, k, 15, case).map_err(|e| e.to_string())?;
        for w in rep.distortions.windows(2) {
            check(w[1] <= w[0], || format!("dataset {case}: distortion rose {} -> {}", w[0], w[1]))?;
        }
    }
    for case in 0..50 {
        let v = rng.gen_range(2..=16);
        let half = rng.gen_range(1..5);
        let cb = ProductCodebook::from_groups(mat(&mut rng, v, half), mat(&mut rng, v, half)).unwrap();
        let x = mat(&mut rng, 64, 2 * half);
        let idx = cb.quantize_rows(x.view()).map_err(|e| e.to_string())?;
        for (t, pair) in idx.indices().iter().enumerate() {
            for g in 0..2 {
                let part = x.slice(s![t, g * half..(g + 1) * half]);
                let mut best = (0, f64::INFINITY);
                for c in 0..v {
                    let dist: f64 = (0..half).map(|j| (part[j] - cb.group(g)[[c, j]]).powi(2)).sum();
                    if dist < best.1 {
                        best = (c, dist);
                    }
                }
                check(pair[g] == best.0, || format!("case {case}: frame {t} group {g} got {} want {}", pair[g], best.0))?;
            }
        }
    }
    Ok("distortion non-increasing on 50 datasets; quantize equals brute-force scan on 50 codebooks (V <= 16)".into())
}

fn lr_schedule() -> Outcome {
    let cfg = TrainingConfig::default();
    let mut got = Vec::new();
    for e in [0usize, 9, 10, 19, 20, 139] {
        let mut expect = 0.001;
        for _ in 0..e / 10 {
            expect *= 0.7;
        }
        let lr = lr_at(&cfg, e);
        // repeated products and powi may round differently in the last place
        check((lr - expect).abs() <= f64::EPSILON * expect * (e / 10) as f64, || {
            format!("epoch {e}: {lr:e} vs {expect:e}")
        })?;
        got.push(format!("{e}:{lr:.6e}"));
    }
    Ok(format!("lr = 0.001 * 0.7^floor(e/10): {}", got.join(" ")))
}

fn overfit() -> Outcome {
    let cfg = ModelConfig {
        decoder_rnn: 64,
        prenet_dim: 32,
        content_rnn: 16,
        ..ModelConfig::test_config()
    };
    let synth = SynthConfig {
        num_speakers: 1,
        utterances_per_speaker: 1,
        min_phones: 2,
        max_phones: 2,
        seed: 6,
        ..SynthConfig::default()
    };
    let full = FeatureConfig::default();
    let small = FeatureConfig {
        n_mels: cfg.n_mels,
        ..full.clone()
    };
    let u = &synth_corpus(&synth, &full).unwrap()[0];
    let mel80 = mel_spectrogram(&u.waveform, &full).unwrap();
    let mel = mel_spectrogram(&u.waveform, &small).unwrap();
    let projection = ContentProjection::fit_with(&[mel80.clone()], cfg.content_dim, 0).unwrap();
    let (codebook, _) = ProductCodebook::train(&mel, cfg.prosody.codebook_size, 5, 0).unwrap();
    let ex = TrainingExample {
        content: projection.transform(&mel80).unwrap(),
        indices: codebook.quantize(&mel).unwrap(),
        alignment: None,
        speaker: 0,
        mel,
    };
    let training = overfit_training();
    let data = [ex];
    let settings = ProsodySettings::inference(ProsodyMode::None, training.tau);
    let mut fresh = VcModel::init(&cfg, training.seed).unwrap();
    fresh.mel_norm = pvc_core::model::MelNorm::fit([data[0].mel.data().view()]).unwrap();
    let initial = teacher_forced_loss(&fresh, &data, settings).unwrap();
    let ckpt = train(&data, &cfg, &training, &mut |_| {}).map_err(|e| e.to_string())?;
    let last = teacher_forced_loss(&ckpt.model, &data, settings).unwrap();
    let ratio = last / initial;
    check(ratio < 0.1, || format!("loss {initial:.4} -> {last:.4} ({:.1}% of initial, need < 10%)", 100.0 * ratio))?;
    Ok(format!(
        "{} frames, 200 epochs: loss {initial:.4} -> {last:.4} ({:.1}% of initial, need < 10%)",
        data[0].mel.num_frames(),
        100.0 * ratio
    ))
}

/// Mode none on one utterance with one update per epoch.
fn overfit_training() -> TrainingConfig {
    TrainingConfig {
        epochs: 200,
        batch_size: 1,
        prosody_mode: ProsodyMode::None,
        prenet_dropout: 0.0,
        lr0: 0.02,
        ..TrainingConfig::default()
    }
}

fn toy_transfer() -> Outcome {
    let cfg = ToyConfig::default();
    let data = ToyData::build(&cfg).map_err(|e| e.to_string())?;
    let none = run_mode(&cfg, &data, ProsodyMode::None, &mut |_| {}).map_err(|e| e.to_string())?;
    let adpf = run_mode(&cfg, &data, ProsodyMode::Adpf, &mut |_| {}).map_err(|e| e.to_string())?;
    let (a, n) = (adpf.mean_consistency(), none.mean_consistency());
    let msg = format!(
        "{} held-out conversions: consistency adpf {a:.3} - none {n:.3} = {:.3} (need >= 0.15)",
        adpf.consistency.len(),
        a - n
    );
    check(a - n >= 0.15, || msg.clone())?;
    Ok(msg)
}

fn isolation() -> Outcome {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let v = cfg.prosody.codebook_size;
    for case in 0..20 {
        let model = VcModel::init(&cfg, case).unwrap();
        let t = rng.gen_range(2..40);
        let speaker = rng.gen_range(0..cfg.num_speakers);
        let ex = example(&mut rng, &cfg, t, speaker);
        let other = IndexSequence::new((0..t).map(|_| [rng.gen_range(0..v), rng.gen_range(0..v)]).collect(), v).unwrap();
        let decode = |idx: &IndexSequence, speaker: usize, mode: ProsodyMode| {
            let input = ModelInput {
                content: &ex.content,
                indices: idx,
                alignment: ex.alignment.as_ref(),
                speaker,
            };
            let streams = model.streams(&input, ProsodySettings::inference(mode, 4)).unwrap();
            let mel = model.decode_streams(&streams, 0.01).unwrap();
            (streams, mel)
        };
        let (_, a) = decode(&ex.indices, ex.speaker, ProsodyMode::None);
        let (_, b) = decode(&other, ex.speaker, ProsodyMode::None);
        check(a.data() == b.data(), || format!("case {case}: mode none output depends on indices"))?;
        for mode in [ProsodyMode::Base, ProsodyMode::Rdpf, ProsodyMode::Adpf] {
            let s0 = decode(&ex.indices, 0, mode).0;
            let s1 = decode(&ex.indices, 1, mode).0;
            check(s0.content == s1.content && s0.prosody == s1.prosody, || {
                format!("case {case}: {mode} streams change with speaker")
            })?;
            check(s0.speaker != s1.speaker, || format!("case {case}: speaker rows coincide"))?;
        }
    }
    Ok("20 models: mode none mel bitwise equal across index sequences; content and prosody streams bitwise equal across speakers".into())
}

fn evaluation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let d = rng.gen_range(2..16);
        let n = rng.gen_range(1..40);
        let target = Array1::from_shape_simple_fn(d, || rng.gen_range(-1.0..1.0));
        let scores: Vec<f64> = (0..n)
            .map(|_| cosine(Array1::from_shape_simple_fn(d, || rng.gen_range(-1.0..1.0)).view(), target.view()))
            .collect();
        let mut thresholds: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..=1.0)).chain(scores.iter().copied()).collect();
        thresholds.sort_by(f64::total_cmp);
        let fars: Vec<f64> = thresholds.iter().map(|&t| far_from_scores(&scores, t).unwrap().far).collect();
        check(fars.windows(2).all(|w| w[1] <= w[0]), || format!("case {case}: FAR rises with threshold"))?;
        check(far_from_scores(&scores, -1.0).unwrap().far == 1.0, || format!("case {case}: FAR at -1 is not 1"))?;
        check(far_from_scores(&scores, f64::from_bits(1f64.to_bits() + 1)).unwrap().far == 0.0, || {
            format!("case {case}: FAR above 1 is not 0")
        })?;
    }
    let hop = 0.01;
    let ramp: Vec<f64> = (0..200).map(|t| 100.0 + 0.5 * t as f64).collect();
    let src = F0Track::new(ramp.clone(), hop).unwrap();
    let base = prosody_consistency(&src, &src).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in [(2.0, 0.0), (0.5, 30.0), (1.7, -40.0), (3.0, 15.0)] {
        let conv = F0Track::new(ramp.iter().map(|f| a * f + b).collect(), hop).unwrap();
        worst = worst.max((prosody_consistency(&src, &conv).unwrap() - base).abs());
    }
    check(base == 1.0 && worst <= 1e-12, || format!("ramp consistency {base}, affine deviation {worst:e}"))?;
    Ok(format!(
        "100 score sets: FAR non-increasing, 1 at -1, 0 above 1; ramp consistency {base}, affine deviation {worst:.0e} (tol 1e-12)"
    ))
}

fn persistence() -> Outcome {
    let cfg = ModelConfig::test_config();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data: Vec<TrainingExample> = (0..3).map(|i| example(&mut rng, &cfg, 12, i % cfg.num_speakers)).collect();
    let training = TrainingConfig {
        epochs: 2,
        batch_size: 2,
        prosody_mode: ProsodyMode::Adpf,
        ..TrainingConfig::default()
    };
    let ckpt = train(&data, &cfg, &training, &mut |_| {}).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pvck");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let first = std::fs::read(&path).unwrap();
    let reloaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let path2 = dir.path().join("b.pvck");
    reloaded.save(&path2).unwrap();
    check(std::fs::read(&path2).unwrap() == first, || "checkpoint bytes differ after reload".into())?;

    let fc = FeatureConfig::default();
    let u = &synth_corpus(&SynthConfig { utterances_per_speaker: 1, ..SynthConfig::default() }, &fc).unwrap()[0];
    let mel = mel_spectrogram(&u.waveform, &fc).unwrap();
    let f0 = pvc_core::features::extract_f0(&u.waveform, &fc).unwrap();
    let content = ContentProjection::fit_with(&[mel.clone()], 16, 0).unwrap().transform(&mel).unwrap();
    let bundle = UtteranceFeatures::new(mel.clone(), f0, content).unwrap();
    let fpath = dir.path().join("u.pvcf");
    bundle.save(&fpath).unwrap();
    let bytes = std::fs::read(&fpath).unwrap();
    UtteranceFeatures::load(&fpath).unwrap().save(&fpath).unwrap();
    check(std::fs::read(&fpath).unwrap() == bytes, || "feature cache bytes differ after reload".into())?;
    let enc = encode_frame_matrix(&mel);
    check(encode_frame_matrix(&decode_frame_matrix(&enc).unwrap()) == enc, || "frame matrix bytes differ".into())?;

    for case in 0..50 {
        let n = rng.gen_range(1..30);
        let mut time = rng.gen_range(0.0..0.5);
        let segs: Vec<RawSegment> = (0..n)
            .map(|i| {
                let start = time;
                time += rng.gen_range(0.01..0.3);
                RawSegment::new(format!("p{i}"), start, time)
            })
            .collect();
        let text = to_tsv(&segs);
        let parsed = parse_alignment_str(&text).map_err(|e| e.to_string())?;
        check(parsed == segs && to_tsv(&parsed) == text, || format!("alignment case {case} does not round-trip"))?;
    }
    Ok(format!(
        "checkpoint ({} bytes) and feature cache ({} bytes) byte-identical; 50 alignment TSVs round-trip",
        first.len(),
        bytes.len()
    ))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(&str, f64, fn() -> Outcome); 10] = [
        ("rdpf timestamps", 1.0, rdpf_timestamps),
        ("adpf structure", 5.0, adpf_structure),
        ("gradient checks", 60.0, gradients),
        ("quantizer", 10.0, quantizer),
        ("lr schedule", 1.0, lr_schedule),
        ("overfit one utterance", 120.0, overfit),
        ("toy prosody transfer", 1800.0, toy_transfer),
        ("conditioning isolation", 10.0, isolation),
        ("evaluation harness", 5.0, evaluation),
        ("persistence", 5.0, persistence),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) if secs <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; took {secs:.1} s, budget {budget} s")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {n:>2} {} {name}: {detail} [{secs:.2} s / {budget} s]",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
