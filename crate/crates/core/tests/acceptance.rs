//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! ```text
//! cargo test --test acceptance
//! ```

mod common;

use dysphase::auditory::{analytic_signal, design_gammatone_bank, envelope_fine_structure};
use dysphase::cli::dispatch;
use dysphase::corpus::{
    load_manifest, synthesize_corpus, AudioClip, CorpusManifest, Label, ManifestEntry, ManifestSource, SynthSpec,
};
use dysphase::experiment::{
    accuracy, auc, make_folds, read_results, run_cross_validation, CrossValidation, CvConfig, ModelConfig,
    PC_GITA_REFERENCE, RESULTS_FILE, SUMMARY_FILE, TABLE_FILE,
};
use dysphase::featurizer::{extract_corpus, FeatureConfig, Representation};
use dysphase::nn::{gradcheck_suite, CnnConfig, GradCheckConfig, TrainConfig};
use dysphase::spectral::{
    group_delay, instantaneous_frequency, modified_group_delay_with_envelope, stft, MgdParams, StftParams, Window,
    MAGNITUDE_FLOOR,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn clip(x: Vec<f64>) -> AudioClip {
    AudioClip::new(x, 16000).unwrap()
}

fn reference_numbers() -> Outcome {
    let row = PC_GITA_REFERENCE
        .iter()
        .find(|r| r.0 == "Magnitude-IF")
        .ok_or("Magnitude-IF row missing")?;
    ensure(
        PC_GITA_REFERENCE.len() == 8 && *row == ("Magnitude-IF", 93.68, 5.32, 0.97, 0.05),
        format!(
            "reference table recorded ({} rows, Magnitude-IF {:.2} ± {:.2} / {:.2} ± {:.2}); \
             not reproducible without the PC-GITA corpus",
            PC_GITA_REFERENCE.len(),
            row.1,
            row.2,
            row.3,
            row.4
        ),
    )
}

fn dsp_oracle() -> Outcome {
    let t = Instant::now();
    let (coef, parseval) = common::stft_oracle_errors(11);
    let secs = t.elapsed().as_secs_f64();
    ensure(
        coef < 1e-9 && parseval < 1e-9 && secs < 5.0,
        format!("50 clips, max coefficient error {coef:.1e}, max Parseval error {parseval:.1e}, {secs:.2}s"),
    )
}

fn group_delay_identities() -> Outcome {
    let mut worst_impulse = 0.0f64;
    for n0 in [0usize, 5, 100] {
        let mut x = vec![0.0; 160];
        x[n0] = 1.0;
        // A rectangular window keeps every impulse position visible; the
        // Hann window is zero at n = 0.
        let p = StftParams {
            window: Window::Rectangular,
            ..StftParams::default()
        };
        let gd = group_delay(&clip(x), &p, MAGNITUDE_FLOOR).map_err(|e| e.to_string())?;
        for v in gd.values.iter() {
            worst_impulse = worst_impulse.max((v - n0 as f64).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..800).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c = clip(x);
    let p = StftParams::default();
    let mag = stft(&c, &p).map_err(|e| e.to_string())?.coeffs.map(|z| z.norm());
    let degenerate = MgdParams {
        alpha: 1.0,
        gamma: 1.0,
        ..MgdParams::default()
    };
    let m = modified_group_delay_with_envelope(&c, &p, &degenerate, &mag).map_err(|e| e.to_string())?;
    let gd = group_delay(&c, &p, MAGNITUDE_FLOOR).map_err(|e| e.to_string())?;
    let worst_mgd = m
        .values
        .iter()
        .zip(gd.values.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    ensure(
        worst_impulse < 1e-9 && worst_mgd < 1e-9,
        format!(
            "impulses at 0/5/100: max error {worst_impulse:.1e}; MGD(α=1, γ=1, Ŝ=|S|) vs group delay {worst_mgd:.1e}"
        ),
    )
}

fn if_tone() -> Outcome {
    let x: Vec<f64> = (0..16000)
        .map(|n| (2.0 * PI * 1025.0 * n as f64 / 16000.0).cos())
        .collect();
    let spec = stft(&clip(x), &StftParams::default()).map_err(|e| e.to_string())?;
    let dominant = (0..spec.n_bins())
        .max_by(|&a, &b| spec.coeffs[(a, 1)].norm().total_cmp(&spec.coeffs[(b, 1)].norm()))
        .unwrap();
    let inf = instantaneous_frequency(&spec).map_err(|e| e.to_string())?;
    let worst = (1..inf.n_frames() - 1)
        .map(|l| (inf.values[(dominant, l)] - PI / 2.0).abs())
        .fold(0.0, f64::max);
    ensure(
        dominant == 10 && worst < 1e-3,
        format!("1025 Hz tone, dominant bin {dominant}, max |IF - π/2| on interior frames {worst:.1e}"),
    )
}

fn hilbert() -> Outcome {
    let n = 1024;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 37.0 * i as f64 / n as f64).cos()).collect();
    let z = analytic_signal(&x).map_err(|e| e.to_string())?;
    let worst = z
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let s = (2.0 * PI * 37.0 * i as f64 / n as f64).sin();
            (c.im - s).abs().max((c.re - x[i]).abs())
        })
        .fold(0.0, f64::max);
    let bank = design_gammatone_bank(81, 50.0, 7800.0, 16000).map_err(|e| e.to_string())?;
    let k = 40;
    let f = bank.center_freqs[k];
    let tone = clip(
        (0..16000)
            .map(|i| 0.3 * (2.0 * PI * f * i as f64 / 16000.0).sin())
            .collect(),
    );
    let (env, _) = envelope_fine_structure(&tone, &bank, 160, 160).map_err(|e| e.to_string())?;
    let interior = &env.values.row(k)[10..env.n_frames() - 10];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    let sd = (interior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / interior.len() as f64).sqrt();
    ensure(
        worst < 1e-9 && sd / mean < 0.05,
        format!(
            "analytic cosine error {worst:.1e}; band {k} ({f:.0} Hz) envelope CV {:.2}%",
            100.0 * sd / mean
        ),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let results = gradcheck_suite(&GradCheckConfig::default()).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let (worst, name) = results
        .iter()
        .map(|r| (r.report.max_rel_error, r.name.as_str()))
        .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
    let entries: usize = results.iter().map(|r| r.report.checked).sum();
    ensure(
        worst < 1e-3 && secs < 60.0,
        format!(
            "{} cases, {entries} entries, max relative error {worst:.2e} ({name}), {secs:.1}s",
            results.len()
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["dysphase"];
    argv.extend_from_slice(args);
    match dispatch(argv.clone()) {
        0 => Ok(()),
        code => Err(format!("{argv:?} exited with {code}")),
    }
}

fn determinism(root: &Path) -> Outcome {
    let cfg = root.join("det.toml");
    std::fs::write(
        &cfg,
        "models = [\"if\", \"mag+if\"]\n\
         [synth]\nn_speakers_per_class = 4\nutterances_per_speaker = 1\nutterance_seconds = 2.0\n\
         [train]\nmax_epochs = 3\n\
         [cv]\nfolds = 2\nn_seeds = 1\nn_splits = 2\n",
    )
    .map_err(|e| e.to_string())?;
    let cfg = cfg.to_str().unwrap();
    let corpus = root.join("det-corpus");
    let manifest = corpus.join("manifest.csv");
    run_cli(&["--config", cfg, "synth", "--out", corpus.to_str().unwrap()])?;
    let mut reports = Vec::new();
    for (run, workers) in [("a", "1"), ("b", "2")] {
        let out = root.join(format!("det-{run}"));
        let out = out.to_str().unwrap();
        let m = manifest.to_str().unwrap();
        run_cli(&[
            "--config",
            cfg,
            "--out-dir",
            out,
            "extract",
            "--rep",
            "mag,if",
            "--manifest",
            m,
        ])?;
        run_cli(&[
            "--config",
            cfg,
            "--out-dir",
            out,
            "crossval",
            "--manifest",
            m,
            "--workers",
            workers,
        ])?;
        let files: Vec<Vec<u8>> = [RESULTS_FILE, SUMMARY_FILE, TABLE_FILE]
            .iter()
            .map(|f| std::fs::read(Path::new(out).join("report").join(f)).map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        reports.push(files);
    }
    let rows = read_results(root.join("det-a/report").join(RESULTS_FILE)).map_err(|e| e.to_string())?;
    ensure(
        reports[0] == reports[1] && !rows.is_empty(),
        format!(
            "synth -> extract -> crossval twice (1 and 2 workers): {} score rows, reports byte-identical: {}",
            rows.len(),
            reports[0] == reports[1]
        ),
    )
}

fn random_manifest(rng: &mut ChaCha8Rng) -> (CorpusManifest, usize) {
    loop {
        let k: usize = rng.random_range(2..=10);
        let n = [rng.random_range(k..=60), rng.random_range(k..=60)];
        // Dev sets can match test sets only when every class leaves at
        // least two test-sized groups after the test speakers are removed.
        if n.iter().any(|&c| c < 3 * c.div_ceil(k)) {
            continue;
        }
        let mut entries = Vec::new();
        for (ci, label) in [Label::Neurotypical, Label::Dysarthric].into_iter().enumerate() {
            for s in 0..n[ci] {
                for u in 0..rng.random_range(1..=3) {
                    entries.push(ManifestEntry {
                        path: format!("c{ci}/s{s}_{u}.wav").into(),
                        speaker_id: format!("c{ci}s{s}"),
                        label,
                    });
                }
            }
        }
        return (CorpusManifest::new(entries, ManifestSource::External).unwrap(), k);
    }
}

fn fold_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..100 {
        let (m, k) = random_manifest(&mut rng);
        let speakers: BTreeSet<String> = m.speaker_labels().into_keys().collect();
        let plan = make_folds(&m, k, rng.random()).map_err(|e| e.to_string())?;
        let mut tested = BTreeSet::new();
        for f in &plan.folds {
            let roles = [&f.test, &f.dev, &f.train];
            let mut seen = BTreeSet::new();
            for s in roles.iter().flat_map(|r| r.iter()) {
                if !seen.insert(s) {
                    return Err(format!("trial {trial} fold {}: {s} in two roles", f.index));
                }
            }
            if seen.len() != speakers.len() {
                return Err(format!(
                    "trial {trial} fold {}: roles cover {} of {}",
                    f.index,
                    seen.len(),
                    speakers.len()
                ));
            }
            if f.dev.len() != f.test.len() {
                return Err(format!(
                    "trial {trial} fold {}: dev {} vs test {}",
                    f.index,
                    f.dev.len(),
                    f.test.len()
                ));
            }
            for s in &f.test {
                if !tested.insert(s.clone()) {
                    return Err(format!("trial {trial}: {s} tested twice"));
                }
            }
        }
        if tested != speakers {
            return Err(format!("trial {trial}: test folds do not cover every speaker"));
        }
    }
    Ok("100 random manifests (k in 3..=10): roles disjoint, tests partition speakers, |dev| = |test|".into())
}

fn pairwise_auc(s: &[f64], l: &[Label]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if l[i] == Label::Dysarthric && l[j] == Label::Neurotypical {
                den += 1.0;
                num += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| {
                if rng.random() {
                    Label::Dysarthric
                } else {
                    Label::Neurotypical
                }
            })
            .collect();
        labels[0] = Label::Dysarthric;
        labels[1] = Label::Neurotypical;
        // Coarse grid forces ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..12) as f64 / 11.0).collect();
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - pairwise_auc(&scores, &labels)).abs());
    }
    let boundary =
        accuracy(&[0.5, 0.5 - 1e-12], &[Label::Dysarthric, Label::Neurotypical]).map_err(|e| e.to_string())?;
    let flipped =
        accuracy(&[0.5, 0.5 - 1e-12], &[Label::Neurotypical, Label::Dysarthric]).map_err(|e| e.to_string())?;
    ensure(
        worst < 1e-12 && boundary == 100.0 && flipped == 0.0,
        format!("1000 vectors, max |AUC - pairwise| {worst:.1e}; score 0.5 -> dysarthric, just below -> neurotypical"),
    )
}

fn end_to_end(root: &Path) -> Outcome {
    let t = Instant::now();
    let dir = root.join("e2e");
    let spec = SynthSpec::default();
    let manifest = synthesize_corpus(&spec, &dir).map_err(|e| e.to_string())?;
    let reps = [Representation::Magnitude, Representation::If];
    let segs = extract_corpus(&manifest, &reps, &FeatureConfig::default(), 1).map_err(|e| e.to_string())?;
    let features: BTreeMap<_, _> = reps.into_iter().zip(segs).collect();
    let run = CrossValidation {
        configs: vec![
            ModelConfig::Single(Representation::If),
            ModelConfig::Single(Representation::Magnitude),
            ModelConfig::Dual(Representation::Magnitude, Representation::If),
        ],
        cv: CvConfig {
            folds: 2,
            n_seeds: 1,
            n_splits: 1,
            seed: 0,
        },
        train: TrainConfig {
            max_epochs: 30,
            ..TrainConfig::default()
        },
        cnn: CnnConfig::default(),
        workers: 1,
    };
    let report = run_cross_validation(&manifest, &features, &run).map_err(|e| e.to_string())?;
    let get = |c: &str| report.summary(c).map(|s| s.auc_mean).unwrap_or(f64::NAN);
    let (auc_if, auc_mag, auc_dual) = (get("single:if"), get("single:mag"), get("dual:mag+if"));
    ensure(
        auc_if >= 0.90 && auc_dual >= auc_mag - 0.02,
        format!(
            "{} speakers x {:.0}s: AUC IF {auc_if:.3} (>= 0.90), Magnitude {auc_mag:.3}, Magnitude-IF {auc_dual:.3} \
             (>= Magnitude - 0.02), {:.0}s",
            manifest.speaker_labels().len(),
            spec.utterances_per_speaker as f64 * spec.utterance_seconds,
            t.elapsed().as_secs_f64()
        ),
    )
}

fn render(root: &Path) -> Outcome {
    let manifest = load_manifest(root.join("e2e/manifest.csv")).map_err(|e| e.to_string())?;
    let wav = manifest.entries[0].path.to_str().unwrap().to_string();
    let out = root.join("figure");
    run_cli(&["render", "--input", &wav, "--out", out.to_str().unwrap()])?;
    let len = dysphase::corpus::load_wav(&wav).map_err(|e| e.to_string())?.len();
    let frames = (len - 320) / 160 + 1;
    let mut notes = Vec::new();
    for (kind, bounded) in [("log_magnitude", false), ("phase", true), ("mgd", false), ("if", true)] {
        let text = std::fs::read_to_string(out.join(format!("{kind}.csv"))).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<f64>> = text
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        if rows.len() != 161 || rows.iter().any(|r| r.len() != frames) {
            return Err(format!("{kind}: expected 161 x {frames}"));
        }
        let (lo, hi) = rows
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if !lo.is_finite() || !hi.is_finite() || (bounded && (lo < -PI || hi > PI)) {
            return Err(format!("{kind}: range [{lo}, {hi}]"));
        }
        if !out.join(format!("{kind}.png")).exists() {
            return Err(format!("{kind}.png missing"));
        }
        notes.push(format!("{kind} [{lo:.2}, {hi:.2}]"));
    }
    Ok(format!("4 panels of 161 x {frames}: {}", notes.join(", ")))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check<'_>)> = vec![
        ("reference-number status", Box::new(reference_numbers)),
        ("DSP oracle equivalence", Box::new(dsp_oracle)),
        ("group-delay impulse identity", Box::new(group_delay_identities)),
        ("IF tone", Box::new(if_tone)),
        ("Hilbert identity", Box::new(hilbert)),
        ("gradient checks", Box::new(gradients)),
        ("determinism", Box::new(|| determinism(root))),
        ("fold integrity", Box::new(fold_integrity)),
        ("metric oracles", Box::new(metrics)),
        ("end-to-end synthetic experiment", Box::new(|| end_to_end(root))),
        ("figure rendering", Box::new(|| render(root))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
