use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pvc_core::alignment::to_tsv;
use pvc_core::config::RunConfig;
use pvc_core::features::{mel_spectrogram, ContentProjection, FeatureConfig};
use pvc_core::model::{train, ProsodyMode, TrainingConfig, TrainingExample};
use pvc_core::quantizer::{stack_rows, ProductCodebook};
use pvc_core::synth::{synth_corpus, SynthConfig};
use pvc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pvc_last_error()) }.to_string_lossy().into_owned()
}

fn tone(n: usize, rate: u32) -> *mut PvcWaveform {
    let x: Vec<f64> = (0..n).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
    let mut w = ptr::null_mut();
    assert_eq!(pvc_waveform_new(x.as_ptr(), x.len(), rate, &mut w), PvcStatus::Ok);
    w
}

#[test]
fn mel_matches_the_library() {
    let w = tone(4800, 24_000);
    let mut m = ptr::null_mut();
    assert_eq!(pvc_mel_spectrogram(w, &mut m), PvcStatus::Ok);
    let (rows, cols) = (pvc_matrix_rows(m), pvc_matrix_cols(m));
    assert_eq!((rows, cols), (20, 80));
    let mut buf = vec![0.0; rows * cols];
    assert_eq!(pvc_matrix_copy(m, buf.as_mut_ptr(), buf.len()), PvcStatus::Ok);

    let x: Vec<f64> = (0..4800).map(|i| 0.3 * (i as f64 * 0.05).sin()).collect();
    let wave = pvc_core::features::Waveform::new(x, 24_000).unwrap();
    let direct = mel_spectrogram(&wave, &FeatureConfig::default()).unwrap();
    assert_eq!(buf, direct.data().iter().copied().collect::<Vec<_>>());

    assert_eq!(pvc_matrix_copy(m, buf.as_mut_ptr(), 3), PvcStatus::InvalidArgument);
    assert!(last_error().contains("need 1600"));
    pvc_matrix_free(m);
    pvc_waveform_free(w);
}

#[test]
fn rdpf_repeats_block_ends() {
    let data: Vec<f64> = (0..10 * 4).map(|i| i as f64).collect();
    let mut p = ptr::null_mut();
    assert_eq!(pvc_prosody_new(data.as_ptr(), 10, 4, 0.01, &mut p), PvcStatus::Ok);
    let mut f = ptr::null_mut();
    assert_eq!(pvc_rdpf(p, 4, &mut f), PvcStatus::Ok);
    let mut out = vec![0.0; 40];
    assert_eq!(pvc_matrix_copy(f, out.as_mut_ptr(), 40), PvcStatus::Ok);
    let expect_row = |t: usize| [3, 3, 3, 3, 7, 7, 7, 7, 9, 9][t];
    for t in 0..10 {
        for j in 0..4 {
            assert_eq!(out[t * 4 + j], data[expect_row(t) * 4 + j]);
        }
    }
    let mut g = ptr::null_mut();
    assert_eq!(pvc_rdpf(p, 0, &mut g), PvcStatus::InvalidArgument);
    assert!(g.is_null());
    pvc_matrix_free(f);
    pvc_matrix_free(p);
}

#[test]
fn null_and_bad_arguments_report_status() {
    let mut m = ptr::null_mut();
    assert_eq!(pvc_mel_spectrogram(ptr::null(), &mut m), PvcStatus::NullPointer);
    assert!(last_error().contains("waveform is null"));
    assert_eq!(pvc_waveform_new(ptr::null(), 5, 24_000, &mut ptr::null_mut()), PvcStatus::NullPointer);
    assert_eq!(pvc_matrix_rows(ptr::null()), 0);
    let mut p = ptr::null_mut();
    let data = [0.0; 6];
    assert_eq!(pvc_prosody_new(data.as_ptr(), 2, 3, -1.0, &mut p), PvcStatus::InvalidArgument);
    let missing = CString::new("/nonexistent/codebook.pvcb").unwrap();
    let mut cb = ptr::null_mut();
    assert_eq!(pvc_codebook_load(missing.as_ptr(), &mut cb), PvcStatus::Io);
    assert!(cb.is_null());
    pvc_matrix_free(ptr::null_mut());
    pvc_codebook_free(ptr::null_mut());
}

const CONFIG: &str = r#"
[features]
content_dim = 16

[quantizer]
codebook_size = 6

[model]
content_dim = 16
content_channels = 8
content_rnn = 4
speaker_dim = 4
prenet_dim = 8
decoder_rnn = 8

[model.prosody]
codebook_size = 6
embed_dim = 4
conv_channels = [4, 4, 4, 4, 4, 4]
kernel = 3
rnn_hidden = 4

[training]
epochs = 1
batch_size = 2
prosody_mode = "adpf"

[vocoder]
iterations = 2
"#;

/// Work directory with a one-epoch adpf model; returns the first
/// utterance's waveform and alignment path.
fn trained_workdir(dir: &Path) -> (Vec<f64>, PathBuf) {
    let cfg = RunConfig::from_toml_str(CONFIG).unwrap();
    let synth = SynthConfig {
        utterances_per_speaker: 1,
        min_phones: 3,
        max_phones: 3,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&synth, &cfg.features).unwrap();
    let mels: Vec<_> = corpus.iter().map(|u| mel_spectrogram(&u.waveform, &cfg.features).unwrap()).collect();
    let projection = ContentProjection::fit(&mels, &cfg.features).unwrap();
    let (codebook, _) = ProductCodebook::train(&stack_rows(&mels).unwrap(), 6, 3, 0).unwrap();
    let hop = cfg.features.hop_seconds();
    let examples: Vec<TrainingExample> = corpus
        .iter()
        .zip(&mels)
        .map(|(u, mel)| TrainingExample {
            content: projection.transform(mel).unwrap(),
            indices: codebook.quantize(mel).unwrap(),
            alignment: Some(pvc_core::alignment::to_frames(&u.segments, mel.num_frames(), hop).unwrap().1),
            speaker: u.speaker,
            mel: mel.clone(),
        })
        .collect();
    let training = TrainingConfig {
        prosody_mode: ProsodyMode::Adpf,
        ..cfg.training.clone()
    };
    let ckpt = train(&examples, &cfg.model, &training, &mut |_| {}).unwrap();
    projection.save(&dir.join("projection.json")).unwrap();
    codebook.save(dir.join("codebook.pvcb")).unwrap();
    ckpt.save(dir.join("checkpoint.pvck")).unwrap();
    std::fs::write(dir.join("run.toml"), CONFIG).unwrap();
    let align = dir.join("utt.tsv");
    std::fs::write(&align, to_tsv(&corpus[0].segments)).unwrap();
    (corpus[0].waveform.samples().to_vec(), align)
}

#[test]
fn converter_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (samples, align) = trained_workdir(tmp.path());
    let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
    let config = CString::new(tmp.path().join("run.toml").to_str().unwrap()).unwrap();
    let align = CString::new(align.to_str().unwrap()).unwrap();

    let mut conv = ptr::null_mut();
    assert_eq!(pvc_converter_load(dir.as_ptr(), config.as_ptr(), &mut conv), PvcStatus::Ok, "{}", last_error());
    assert_eq!(pvc_converter_num_speakers(conv), 2);

    let mut src = ptr::null_mut();
    assert_eq!(pvc_waveform_new(samples.as_ptr(), samples.len(), 24_000, &mut src), PvcStatus::Ok);
    let mut out = ptr::null_mut();
    assert_eq!(
        pvc_convert(conv, src, align.as_ptr(), 1, PvcMode::Adpf, &mut out),
        PvcStatus::Ok,
        "{}",
        last_error()
    );
    assert_eq!(pvc_waveform_sample_rate(out), 24_000);
    let hop = 240;
    assert_eq!(pvc_waveform_len(out).div_ceil(hop), samples.len().div_ceil(hop));

    let mut none = ptr::null_mut();
    assert_eq!(pvc_convert(conv, src, ptr::null(), 1, PvcMode::Adpf, &mut none), PvcStatus::MissingInput);
    assert!(last_error().contains("alignment"));
    assert_eq!(pvc_convert(conv, src, align.as_ptr(), 5, PvcMode::Adpf, &mut none), PvcStatus::InvalidArgument);
    assert_eq!(pvc_convert(conv, src, align.as_ptr(), 0, PvcMode::Rdpf, &mut none), PvcStatus::InvalidArgument);
    assert!(none.is_null());

    pvc_waveform_free(out);
    pvc_waveform_free(src);
    pvc_converter_free(conv);
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_builds_against_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "pvc.h"

int main(void) {
    double x[4800];
    for (int i = 0; i < 4800; i++) x[i] = 0.0;
    PvcWaveform *w = NULL;
    if (pvc_waveform_new(x, 4800, 24000, &w) != PVC_STATUS_OK) return 1;
    PvcMatrix *mel = NULL;
    if (pvc_mel_spectrogram(w, &mel) != PVC_STATUS_OK) return 2;
    if (pvc_matrix_rows(mel) != 20 || pvc_matrix_cols(mel) != 80) return 3;
    PvcMatrix *bad = NULL;
    if (pvc_rdpf(mel, 4, &bad) != PVC_STATUS_INVALID_ARGUMENT || bad != NULL) return 4;
    printf("%s|%s\n", pvc_version(), pvc_last_error());
    pvc_matrix_free(mel);
    pvc_waveform_free(w);
    return 0;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib_dir = target_dir();
    assert!(lib_dir.join("libpvc_ffi.so").is_file(), "shared library not built in {}", lib_dir.display());
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lpvc_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler runs");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
    assert!(text.contains("expected prosody features, got mel"), "{text}");
}
