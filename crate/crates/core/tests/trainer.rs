use vqcodec::dsp::{extract_f0, FULL_SCALE};
use vqcodec::grad::Parameter;
use vqcodec::model::{CodecModel, ModelConfig, PreparedExample};
use vqcodec::trainer::{
    evaluate, generate_synthetic, harmonic_tone, pitch_labels, train_step, Adam, MetricsWriter, TrainConfig,
    TrainError, Trainer,
};

fn fast_config(steps: usize) -> TrainConfig {
    TrainConfig { steps, learning_rate: 1e-3, batch_size: 2, crop_samples: 1600, ..TrainConfig::default() }
}

fn values(model: &CodecModel) -> Vec<Vec<u64>> {
    model
        .network_params()
        .chain(model.codebooks.all())
        .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn constant_200hz_tone_tracks() {
    let f0 = vec![200.0; 16000];
    let audio = harmonic_tone(&f0, &[1.0, 0.6, 0.3], 16000);
    let track = extract_f0(&audio).unwrap();
    let labels = pitch_labels(&f0, 16000);
    assert_eq!(track.len(), labels.len());
    for i in 3..track.len() - 3 {
        let hz = track.f0_hz(i).expect("voiced");
        assert!((hz - 200.0).abs() <= 4.0, "frame {i}: {hz}");
        assert!((labels.f0_hz(i).unwrap() - 200.0).abs() < 1e-9);
    }
}

#[test]
fn synthetic_corpus_contract() {
    let cfg = ModelConfig::tiny();
    let a = generate_synthetic(6, 0.5, 3, &cfg).unwrap();
    let b = generate_synthetic(6, 0.5, 3, &cfg).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_synthetic(6, 0.5, 4, &cfg).unwrap());
    for u in &a {
        assert_eq!(u.audio.len(), 8000);
        assert_eq!(u.pitch.len(), 100);
        assert!(u.audio.samples.iter().all(|&s| (-16384..=16384).contains(&(s as i32))));
        let peak = u.audio.samples.iter().map(|s| (*s as i32).abs()).max().unwrap();
        assert_eq!(peak as f64, 0.5 * FULL_SCALE);
        for i in 0..u.pitch.len() {
            if let Some(hz) = u.pitch.f0_hz(i) {
                assert!((80.0 - 1e-9..=300.0 + 1e-9).contains(&hz));
            }
        }
        u.prepare(&cfg).unwrap();
    }
    assert!(generate_synthetic(1, 0.0101, 0, &cfg).is_err());
    assert!(generate_synthetic(1, 0.015, 0, &cfg).is_err());
}

#[test]
fn generated_pitch_labels_agree_with_tracker() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(4, 1.0, 11, &cfg).unwrap();
    let (mut agree, mut total) = (0, 0);
    for u in &corpus {
        let track = extract_f0(&u.audio).unwrap();
        for i in 3..u.pitch.len() - 3 {
            // Skip frames near a voicing boundary.
            if (i - 3..=i + 3).all(|j| u.pitch.voiced[j]) {
                total += 1;
                if let (Some(a), Some(b)) = (track.f0_hz(i), u.pitch.f0_hz(i)) {
                    if (a - b).abs() <= 0.02 * b {
                        agree += 1;
                    }
                }
            }
        }
    }
    assert!(agree as f64 >= 0.95 * total as f64, "{agree}/{total}");
}

#[test]
fn zero_learning_rate_without_ema_changes_nothing() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(2, 0.2, 1, &cfg).unwrap();
    let batch: Vec<PreparedExample> = corpus.iter().map(|u| u.prepare(&cfg).unwrap()).collect();
    let mut model = CodecModel::new(cfg, 5).unwrap();
    let before = values(&model);
    let tc = TrainConfig { learning_rate: 0.0, ema_enabled: false, ..fast_config(1) };
    let mut opt = Adam::new();
    for step in 1..=3 {
        train_step(&mut model, &mut opt, &batch, &tc, step).unwrap();
    }
    assert_eq!(values(&model), before);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut p = Parameter::new("w", vqcodec::grad::Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    p.accumulate_grad(&vqcodec::grad::Tensor::new(vec![3], vec![0.3, -4.0, 0.0]).unwrap());
    let tc = TrainConfig { learning_rate: 0.01, adam_epsilon: 1e-12, ..TrainConfig::default() };
    let mut opt = Adam::new();
    opt.begin_step();
    opt.update(&mut p, &tc);
    let v = p.value.data();
    assert!((v[0] - 0.99).abs() < 1e-12);
    assert!((v[1] + 1.99).abs() < 1e-12);
    assert_eq!(v[2], 0.5);
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(1, 0.2, 1, &cfg).unwrap();
    let batch = vec![corpus[0].prepare(&cfg).unwrap()];
    let mut model = CodecModel::new(cfg, 5).unwrap();
    model.f0_head.output.bias.value.data_mut()[0] = f64::NAN;
    let err = train_step(&mut model, &mut Adam::new(), &batch, &fast_config(1), 17).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 17, .. }), "{err}");
}

#[test]
fn runs_are_deterministic_and_keep_identities() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(3, 0.5, 2, &cfg).unwrap();
    let run = || {
        let mut t = Trainer::new(CodecModel::new(cfg.clone(), 3).unwrap(), fast_config(6), corpus.clone()).unwrap();
        let mut rows = Vec::new();
        while t.steps_done() < 6 {
            rows.push(t.step().unwrap());
            let ema = t.model.codebooks.ema.as_ref().unwrap();
            for (p, st) in t.model.codebooks.maps.iter().zip(&ema.maps) {
                for r in 0..st.counts.len() {
                    assert!(st.counts[r] >= 0.0);
                    for (c, e) in p.value.row(r).iter().enumerate() {
                        assert_eq!(*e, st.sums.at(r, c) / (st.counts[r] + ema.epsilon));
                    }
                }
            }
        }
        (rows, t.model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    for r in &a {
        assert!(r.loss.identity_holds());
        assert!(r.perplexity.iter().all(|&p| (1.0..=256.0).contains(&p)));
    }
    let mut csv = Vec::new();
    let mut w = MetricsWriter::new(&mut csv, 2).unwrap();
    for r in &a {
        w.write(r).unwrap();
    }
    w.flush().unwrap();
    drop(w);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("step,total,reconstruction_nll,"));
}

#[test]
fn untrained_nll_near_uniform() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(4, 0.5, 8, &cfg).unwrap();
    let examples: Vec<PreparedExample> = corpus.iter().map(|u| u.prepare(&cfg).unwrap()).collect();
    let model = CodecModel::new(cfg, 9).unwrap();
    let row = evaluate(&model, &examples, &TrainConfig::default(), 0).unwrap();
    let ln256 = 256f64.ln();
    assert!((row.loss.reconstruction_nll - ln256).abs() <= 0.1 * ln256, "{}", row.loss.reconstruction_nll);
    assert!(row.loss.identity_holds());
    assert!(matches!(evaluate(&model, &[], &TrainConfig::default(), 0), Err(TrainError::EmptyExamples)));
}

#[test]
fn fixed_batch_loss_halves_in_200_steps() {
    let cfg = ModelConfig::tiny();
    let corpus = generate_synthetic(2, 0.1, 21, &cfg).unwrap();
    let batch: Vec<PreparedExample> = corpus.iter().map(|u| u.prepare(&cfg).unwrap()).collect();
    let mut model = CodecModel::new(cfg, 21).unwrap();
    let tc = fast_config(200);
    let mut opt = Adam::new();
    let totals: Vec<f64> =
        (1..=200).map(|s| train_step(&mut model, &mut opt, &batch, &tc, s).unwrap().loss.total).collect();
    let head = totals[..10].iter().sum::<f64>() / 10.0;
    let last = *totals.last().unwrap();
    println!("fixed batch: first-10 mean {head:.4}, final {last:.4}, ratio {:.4}", last / head);
    assert!(last < 0.5 * head);
    let windows: Vec<f64> = totals.chunks(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    println!("20-step window means: {windows:.3?}");
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

#[test]
fn train_config_validation() {
    let cfg = ModelConfig::tiny();
    assert!(TrainConfig::default().validate(&cfg).is_ok());
    assert!(TrainConfig { crop_samples: 1000, ..TrainConfig::default() }.validate(&cfg).is_err());
    assert!(TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() }.validate(&cfg).is_err());
    assert!(TrainConfig { ema_decay: 1.0, ..TrainConfig::default() }.validate(&cfg).is_err());
    assert!(TrainConfig { steps: 0, ..TrainConfig::default() }.validate(&cfg).is_err());
    let json = serde_json::to_string(&TrainConfig::default()).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
    v.as_object_mut().unwrap().remove("seed");
    assert!(serde_json::from_value::<TrainConfig>(v).is_err());
}
