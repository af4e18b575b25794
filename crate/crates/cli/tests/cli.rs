use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rawfe::io::{read_features, write_features, write_wav, FeatureFormat};
use rawfe::{FeatureMatrix, Waveform};
use tempfile::TempDir;

fn rawfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rawfe"))
        .args(args)
        .output()
        .expect("spawn rawfe")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic tone plus a little hash noise, `secs` long.
fn wav(dir: &TempDir, name: &str, secs: f64) -> PathBuf {
    let m = (secs * 16000.0) as usize;
    let samples = (0..m)
        .map(|i| {
            let t = i as f64 / 16000.0;
            let n = ((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0 - 0.5;
            0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.05 * n
        })
        .collect();
    let p = dir.path().join(name);
    write_wav(&p, &Waveform::new(samples).unwrap()).unwrap();
    p
}

fn feats(dir: &TempDir, name: &str, t: usize, f: usize) -> PathBuf {
    let fm = FeatureMatrix::new(ndarray::Array2::from_elem((t, f), 0.5), 160).unwrap();
    let p = dir.path().join(name);
    write_features(&fm, &p, FeatureFormat::RawF32).unwrap();
    p
}

#[test]
fn extract_gammatone_reports_shape() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "a.wav", 1.0);
    let out = dir.path().join("a.feat");
    let o = rawfe(&["extract", "--type", "gt", s(&input), s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("T=94 F=50 shift=160"), "{}", stdout(&o));
    let fm = read_features(&out).unwrap();
    assert_eq!((fm.num_frames(), fm.dim(), fm.frame_shift_samples()), (94, 50, 160));
}

#[test]
fn extract_text_format_and_out_dir() {
    let dir = TempDir::new().unwrap();
    let a = wav(&dir, "a.wav", 0.5);
    let b = wav(&dir, "b.wav", 0.6);
    let out = dir.path().join("out");
    std::fs::create_dir(&out).unwrap();
    let o = rawfe(&["extract", "--type", "gt", "--format", "text", "--out-dir", s(&out), s(&a), s(&b)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("a.feat")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 44);
    assert!(out.join("b.feat").exists());
}

#[test]
fn random_init_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "a.wav", 1.0);
    let (x, y) = (dir.path().join("x.feat"), dir.path().join("y.feat"));
    for out in [&x, &y] {
        let o = rawfe(&["extract", "--type", "w2v-large", "--random-init", "--seed", "3", s(&input), s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap());
    assert_eq!(read_features(&x).unwrap().dim(), 512);
}

#[test]
fn sc_without_weights_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "a.wav", 0.5);
    let out = dir.path().join("a.feat");
    let o = rawfe(&["extract", "--type", "sc", s(&input), s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--random-init"));
    assert!(!out.exists());
}

#[test]
fn failed_extraction_leaves_no_output() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "short.wav", 0.03);
    let out = dir.path().join("short.feat");
    let o = rawfe(&["extract", "--type", "gt", s(&input), s(&out)]);
    assert!(!o.status.success());
    assert!(!out.exists());
    assert!(!dir.path().join("short.feat.partial").exists());
}

#[test]
fn chunked_extraction_keeps_frame_count() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "a.wav", 2.5);
    let out = dir.path().join("a.feat");
    let o = rawfe(&[
        "extract", "--type", "sc", "--random-init", "--chunk-size", "1", "--chunk-shift", "0.5",
        s(&input), s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fm = read_features(&out).unwrap();
    assert_eq!((fm.num_frames(), fm.dim()), ((40000 - 646) / 160 + 1, 750));
}

#[test]
fn analyze_prints_table_and_keys() {
    let o = rawfe(&["analyze", "--type", "w2v-large"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("w2v-large.params_verdict=PASS"), "{out}");
    assert!(out.contains("w2v-large.receptive_field_samples=12945"), "{out}");
    assert!(out.contains("w2v-large.subsampling_factor=160"), "{out}");

    let out = stdout(&rawfe(&["analyze"]));
    for key in ["gt.params=35000", "sc.receptive_field_samples=646", "w2v-regular.receptive_field_samples=3345"] {
        assert!(out.contains(key), "missing {key} in\n{out}");
    }
    assert!(out.contains("NOTE:"));
    assert!(out.contains("gt.am_params_delta_vs_gt=0"));
}

#[test]
fn combine_with_ivector() {
    let dir = TempDir::new().unwrap();
    let gt = feats(&dir, "gt.feat", 30, 50);
    let w2v = feats(&dir, "w2v.feat", 30, 512);
    let iv = feats(&dir, "iv.vec", 1, 200);
    let out = dir.path().join("all.feat");
    let o = rawfe(&["combine", s(&gt), s(&w2v), "--ivector", s(&iv), "-o", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fm = read_features(&out).unwrap();
    assert_eq!((fm.num_frames(), fm.dim()), (30, 762));
}

#[test]
fn combine_needs_two_streams() {
    let dir = TempDir::new().unwrap();
    let gt = feats(&dir, "gt.feat", 30, 50);
    let o = rawfe(&["combine", s(&gt), "-o", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn combine_rejects_mismatched_lengths() {
    let dir = TempDir::new().unwrap();
    let a = feats(&dir, "a.feat", 30, 50);
    let b = feats(&dir, "b.feat", 29, 512);
    let out = dir.path().join("x.feat");
    let o = rawfe(&["combine", s(&a), s(&b), "-o", s(&out)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("a.feat: T=30") && err.contains("b.feat: T=29"), "{err}");
    assert!(!out.exists());

    let o = rawfe(&["combine", s(&a), s(&b), "--truncate-to-min", "-o", s(&out)]);
    assert!(o.status.success());
    assert_eq!(read_features(&out).unwrap().num_frames(), 29);
}

#[test]
fn ivector_with_toy_model() {
    let dir = TempDir::new().unwrap();
    let input = wav(&dir, "a.wav", 1.0);
    let out = dir.path().join("a.vec");
    let o = rawfe(&["ivector", "--toy-model", s(&input), s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fm = read_features(&out).unwrap();
    assert_eq!((fm.num_frames(), fm.dim()), (1, 200));
    let norm: f64 = fm.frame(0).iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);
    assert_eq!(rawfe(&["ivector", s(&input), s(&out)]).status.code(), Some(2));
}
