//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! ```text
//! cargo test --release -p vqcodec --test acceptance
//! ```

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::brute_nearest;
use vqcodec::bitstream::{bitrate, pack, unpack, PackedStream};
use vqcodec::dsp::{compress_sample, expand_symbol, AudioBuffer, FULL_SCALE};
use vqcodec::grad::{Tape, Tensor, Var};
use vqcodec::model::{quantize, speaker_code, CodeSequence, CodecModel, ModelConfig};
use vqcodec::trainer::{generate_synthetic, TrainConfig, TrainSummary, Trainer};
use vqcodec::verify::grad_cases;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// `sr * maps * ceil(log2 K) / prod(strides)` in integer arithmetic.
fn reference_rate(cfg: &ModelConfig) -> u64 {
    let width = (0..).find(|&b| (1u64 << b) >= cfg.codebook_size as u64).unwrap();
    let factor: u64 = cfg.strides.iter().map(|&s| s as u64).product();
    let num = cfg.sample_rate as u64 * cfg.num_maps as u64 * width;
    assert_eq!(num % factor, 0);
    num / factor
}

fn c1_rate_arithmetic() -> Outcome {
    let start = Instant::now();
    let rates: Vec<f64> = (0..3).map(|n| bitrate(&ModelConfig::default().with_extra_stride2(n))).collect();
    let elapsed = start.elapsed();
    ensure(rates == [1600.0, 800.0, 400.0], || format!("got {rates:?}"))?;
    for n in 0..3 {
        let cfg = ModelConfig::default().with_extra_stride2(n);
        ensure(bitrate(&cfg) == reference_rate(&cfg) as f64, || format!("+{n} layers disagrees with integer oracle"))?;
    }
    ensure(elapsed < Duration::from_millis(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{rates:?} bps in {elapsed:?}"))
}

fn c2_stream_exactness() -> Outcome {
    let cfg = ModelConfig::default();
    let model = CodecModel::new(cfg.clone(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs: Vec<(&str, Vec<i16>)> = vec![
        ("silence", vec![0; 16000]),
        ("noise", (0..16000).map(|_| rng.random()).collect()),
        ("tone", (0..16000).map(|n| (12000.0 * (n as f64 * 0.07).sin()) as i16).collect()),
        ("full-scale square", (0..16000).map(|n| if n / 40 % 2 == 0 { i16::MAX } else { i16::MIN }).collect()),
    ];
    for (name, samples) in &inputs {
        let codes = model.encode(&AudioBuffer::new(samples.clone(), 16000)).unwrap();
        let stream = pack(&codes, &cfg).unwrap();
        ensure(stream.payload.len() == 200, || format!("{name}: {} payload bytes", stream.payload.len()))?;
    }
    let mut checked = 0;
    for _ in 0..20 {
        let frames = rng.random_range(1..=150);
        let samples: Vec<i16> = (0..frames * 160).map(|_| rng.random_range(-8000..8000)).collect();
        let codes = model.encode(&AudioBuffer::new(samples, 16000)).unwrap();
        let stream = pack(&codes, &cfg).unwrap();
        let measured = (stream.payload.len() * 8) as f64 * 16000.0 / (frames * 160) as f64;
        ensure(measured == bitrate(&cfg), || format!("{frames} frames: {measured} bps"))?;
        ensure(stream.measured_bitrate() == Some(bitrate(&cfg)), || format!("{frames} frames: library rate differs"))?;
        checked += 1;
    }
    Ok(format!("{} one-second inputs gave 200 bytes; {checked} aligned lengths at exactly 1600 bps", inputs.len()))
}

fn c3_mulaw() -> Outcome {
    let start = Instant::now();
    let mut prev = compress_sample(i16::MIN);
    let mut max_err = 0.0f64;
    for x in i16::MIN..=i16::MAX {
        let y = compress_sample(x);
        ensure(y >= prev, || format!("not monotone at {x}"))?;
        prev = y;
        max_err = max_err.max((expand_symbol(y) as f64 - x as f64).abs() / FULL_SCALE);
    }
    for s in 0..=255u8 {
        ensure(compress_sample(expand_symbol(s)) == s, || format!("symbol {s} not a fixed point"))?;
    }
    let elapsed = start.elapsed();
    ensure(max_err <= 0.025, || format!("max error {max_err}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("max normalized error {max_err:.5}, {elapsed:?}"))
}

fn c4_vq_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut selections, mut ties) = (0, 0);
    for case in 0..1000 {
        let k = rng.random_range(1..=64);
        let dim = rng.random_range(1..=8);
        let maps = rng.random_range(1..=3);
        let frames = rng.random_range(1..=6);
        let on_grid = case % 2 == 0;
        let mut draw = || if on_grid { rng.random_range(-1..=1) as f64 } else { rng.random_range(-1.0..1.0) };
        let books: Vec<Tensor> =
            (0..maps).map(|_| Tensor::new(vec![k, dim], (0..k * dim).map(|_| draw()).collect()).unwrap()).collect();
        let z = Tensor::new(vec![maps * dim, frames], (0..maps * dim * frames).map(|_| draw()).collect()).unwrap();
        let mut tape = Tape::new();
        let cbs: Vec<Var> = books.iter().map(|b| tape.constant(b.clone())).collect();
        let zv = tape.constant(z.clone());
        let q = quantize(&mut tape, zv, &cbs).map_err(|e| format!("case {case}: {e}"))?;
        for t in 0..frames {
            let col: Vec<f64> = (0..maps * dim).map(|r| z.data()[r * frames + t]).collect();
            for (m, book) in books.iter().enumerate() {
                let sub = &col[m * dim..(m + 1) * dim];
                let expect = brute_nearest(book, sub);
                let got = q.indices[t][m] as usize;
                ensure(got == expect, || format!("case {case} frame {t} map {m}: got {got}, expected {expect}"))?;
                let d = |r: usize| book.row(r).iter().zip(sub).map(|(e, x)| (x - e).powi(2)).sum::<f64>();
                if (0..k).filter(|&r| d(r) == d(expect)).count() > 1 {
                    ties += 1;
                }
                selections += 1;
            }
        }
    }
    Ok(format!("1000 instances, {selections} selections, {ties} ties, 0 mismatches"))
}

/// Central differences computed here, independent of the library checker.
fn numeric_grad(f: &dyn Fn(&mut Tape, &[Var]) -> f64, inputs: &[Tensor], which: usize, h: f64) -> Vec<f64> {
    let eval = |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.variable(v.clone())).collect();
        f(&mut tape, &vars)
    };
    let mut work = inputs.to_vec();
    (0..inputs[which].data().len())
        .map(|i| {
            let x = inputs[which].data()[i];
            work[which].data_mut()[i] = x + h;
            let up = eval(&work);
            work[which].data_mut()[i] = x - h;
            let down = eval(&work);
            work[which].data_mut()[i] = x;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn c5_gradient_checks() -> Outcome {
    let start = Instant::now();
    let cases = grad_cases(5);
    let mut worst = (0.0f64, "");
    let mut elements = 0;
    for (name, f, inputs) in &cases {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
        let out = f(&mut tape, &vars).map_err(|e| format!("{name}: {e}"))?;
        ensure(tape.value(out).data().len() == 1, || format!("{name}: output is not scalar"))?;
        tape.backward(out).map_err(|e| format!("{name}: {e}"))?;
        let scalar = |tape: &mut Tape, v: &[Var]| {
            let out = f(tape, v).unwrap();
            tape.item(out)
        };
        for (i, &v) in vars.iter().enumerate() {
            let analytic = tape.grad_or_zeros(v);
            let numeric = numeric_grad(&scalar, inputs, i, 1e-5);
            for (a, n) in analytic.data().iter().zip(&numeric) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                ensure(rel < 1e-4, || format!("{name} input {i}: analytic {a}, numeric {n}, rel {rel:.3e}"))?;
                if rel > worst.0 {
                    worst = (rel, name);
                }
                elements += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(cases.iter().any(|c| c.0.contains("composite")), || "no composite case".into())?;
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} cases, {elements} elements, worst relative error {:.2e} ({}), {elapsed:.2?}",
        cases.len(),
        worst.0,
        worst.1
    ))
}

fn c6_straight_through() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..100 {
        let (k, dim, maps, frames) =
            (rng.random_range(1..=16), rng.random_range(1..=6), rng.random_range(1..=3), rng.random_range(1..=8));
        let books: Vec<Tensor> = (0..maps).map(|_| rand_tensor(&mut rng, &[k, dim])).collect();
        let z = rand_tensor(&mut rng, &[maps * dim, frames]);
        let weights = rand_tensor(&mut rng, &[maps * dim, frames]);
        let loss = |tape: &mut Tape, v: Var| {
            let w = tape.constant(weights.clone());
            let p = tape.mul(v, w).unwrap();
            let p = tape.sigmoid(p);
            let zero = tape.constant(Tensor::zeros(&[maps * dim, frames]));
            tape.mse(p, zero, None).unwrap()
        };
        let mut tape = Tape::new();
        let zv = tape.variable(z);
        let cbs: Vec<Var> = books.iter().map(|b| tape.constant(b.clone())).collect();
        let q = quantize(&mut tape, zv, &cbs).unwrap();
        let qval = tape.value(q.quantized).clone();
        let l = loss(&mut tape, q.quantized);
        tape.backward(l).unwrap();
        let through = tape.grad(zv).ok_or("no latent gradient")?;

        let mut bypass = Tape::new();
        let qv = bypass.variable(qval);
        let l = loss(&mut bypass, qv);
        bypass.backward(l).unwrap();
        let direct = bypass.grad(qv).unwrap();
        ensure(bits(&through) == bits(&direct), || format!("case {case}: gradients differ"))?;
    }
    Ok("100 instances bit-identical".into())
}

fn c7_causality() -> Outcome {
    let model = CodecModel::new(ModelConfig::tiny(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = 800;
    let channels = model.config.latent_dim + model.config.speaker_dim;
    let cond = rand_tensor(&mut rng, &[channels, len / model.config.downsampling_factor()]);
    let logits = |inputs: &[u8]| {
        let mut tape = Tape::new();
        let c = tape.constant(cond.clone());
        let l = model.decoder_logits(&mut tape, inputs, c).unwrap();
        tape.value(l).clone()
    };
    let inputs: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    let base = logits(&inputs);
    let rows = base.shape()[0];
    let column = |t: &Tensor, p: usize| (0..rows).map(|r| t.data()[r * len + p].to_bits()).collect::<Vec<_>>();
    for probe in 0..50 {
        let t = rng.random_range(0..len - 1);
        let mut changed = inputs.clone();
        for _ in 0..rng.random_range(1..=20) {
            let s = rng.random_range(t + 1..len);
            changed[s] = changed[s].wrapping_add(rng.random_range(1..=255));
        }
        let out = logits(&changed);
        for p in 0..=t {
            ensure(column(&out, p) == column(&base, p), || format!("probe {probe}: position {p} changed (t = {t})"))?;
        }
    }
    Ok(format!("50 probes over {len} positions, receptive field {}", model.decoder.receptive_field()))
}

fn c8_training() -> Outcome {
    let start = Instant::now();
    let model_config = ModelConfig::tiny();
    let config = TrainConfig { steps: 1000, learning_rate: 1e-3, batch_size: 2, crop_samples: 1600, seed: 7, ..TrainConfig::default() };
    let corpus = generate_synthetic(8, 1.0, 7, &model_config).unwrap();
    let model = CodecModel::new(model_config, 7).unwrap();
    let mut trainer = Trainer::new(model, config.clone(), corpus).unwrap();
    let rows = trainer.run(|_| Ok(())).map_err(|e| e.to_string())?;
    let evaluation = trainer.evaluate().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let totals: Vec<f64> = rows.iter().map(|r| r.loss.total).collect();
    let f0: Vec<f64> = rows.iter().map(|r| r.loss.f0_loss).collect();
    let (head, tail) = (mean(&totals[..10]), mean(&totals[totals.len() - 20..]));
    let (f0_head, f0_tail) = (mean(&f0[..10]), mean(&f0[f0.len() - 20..]));
    let f0_drop = 1.0 - f0_tail / f0_head;
    let summary = TrainSummary::new(&rows, config.seed, evaluation.clone());
    ensure((summary.total_ratio - tail / head).abs() < 1e-12, || "summary ratio disagrees".into())?;

    let detail = format!(
        "{} steps, total {head:.3} -> {tail:.3} (ratio {:.3}), f0 down {:.1}%, perplexity {:.1?}, {elapsed:.1?}",
        rows.len(),
        tail / head,
        100.0 * f0_drop,
        evaluation.perplexity
    );
    ensure(rows.len() <= 2000, || detail.clone())?;
    ensure(tail < 0.5 * head, || format!("total ratio too high: {detail}"))?;
    ensure(f0_drop >= 0.30, || format!("f0 decrease too small: {detail}"))?;
    ensure(evaluation.perplexity.iter().all(|&p| p >= 4.0), || format!("perplexity too low: {detail}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn c9_determinism() -> Outcome {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<i16> = (0..4000).map(|n| (6000.0 * (n as f64 * 0.05).sin()) as i16 + rng.random_range(-500..500)).collect();
    let audio = AudioBuffer::new(samples, 16000);
    let a = CodecModel::new(cfg.clone(), 9).unwrap();
    let b = CodecModel::new(cfg.clone(), 9).unwrap();
    let bytes_a = pack(&a.encode(&audio).unwrap(), &cfg).unwrap().to_bytes();
    let bytes_b = pack(&b.encode(&audio).unwrap(), &cfg).unwrap().to_bytes();
    let bytes_c = pack(&a.encode(&audio).unwrap(), &cfg).unwrap().to_bytes();
    ensure(bytes_a == bytes_b && bytes_a == bytes_c, || "encode bytes differ".into())?;

    for case in 0..10_000 {
        let mut c = ModelConfig::tiny();
        c.codebook_size = rng.random_range(1..=4096);
        c.num_maps = rng.random_range(1..=4);
        c.latent_dim = c.num_maps * 2;
        c.speaker_codebook_size = rng.random_range(1..=1024);
        let frames = rng.random_range(0..=60);
        let factor = c.downsampling_factor();
        let codes = CodeSequence {
            frames: (0..frames)
                .map(|_| (0..c.num_maps).map(|_| rng.random_range(0..c.codebook_size) as u16).collect())
                .collect(),
            speaker_index: rng.random_range(0..c.speaker_codebook_size) as u16,
            num_samples: if frames == 0 { 0 } else { (frames * factor - rng.random_range(0..factor)) as u32 },
        };
        let bytes = pack(&codes, &c).map_err(|e| format!("case {case}: {e}"))?.to_bytes();
        let (back, layout) = unpack(&PackedStream::from_bytes(&bytes).map_err(|e| format!("case {case}: {e}"))?)
            .map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == codes, || format!("case {case}: codes differ"))?;
        ensure(layout.check_matches(&c).is_ok(), || format!("case {case}: layout differs"))?;
    }

    let codes = a.encode(&audio).unwrap();
    for temperature in [0.0, 0.7, 1.0] {
        let x = a.sample_waveform(&codes, 42, temperature).unwrap();
        let y = b.sample_waveform(&codes, 42, temperature).unwrap();
        ensure(x == y, || format!("decode differs at temperature {temperature}"))?;
    }
    Ok(format!("encode stable ({} bytes), 10000 fuzz cases, decode identical at 3 temperatures", bytes_a.len()))
}

fn c10_pooling_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut trials = 0;
    for trial in 0..100 {
        let (ds, t, k) = (rng.random_range(1..=32), rng.random_range(1..=100), rng.random_range(1..=256));
        let book = rand_tensor(&mut rng, &[k, ds]);
        let feats = rand_tensor(&mut rng, &[ds, t]);
        let mut perm: Vec<usize> = (0..t).collect();
        for i in (1..t).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Tensor::new(
            vec![ds, t],
            (0..ds).flat_map(|r| perm.iter().map(move |&p| (r, p))).map(|(r, p)| feats.data()[r * t + p]).collect(),
        )
        .unwrap();
        let index = |f: &Tensor| {
            let mut tape = Tape::new();
            let cb = tape.constant(book.clone());
            let fv = tape.constant(f.clone());
            speaker_code(&mut tape, fv, cb).unwrap().index
        };
        let (i0, i1) = (index(&feats), index(&permuted));
        ensure(i0 == i1, || format!("trial {trial}: {i0} vs {i1}"))?;
        trials += 1;
    }
    Ok(format!("{trials} trials, index unchanged"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("rate arithmetic", c1_rate_arithmetic),
        ("stream exactness", c2_stream_exactness),
        ("mu-law exhaustive round trip", c3_mulaw),
        ("VQ brute-force equivalence", c4_vq_oracle),
        ("gradient checks", c5_gradient_checks),
        ("straight-through contract", c6_straight_through),
        ("decoder causality", c7_causality),
        ("desk-scale training", c8_training),
        ("round-trip determinism", c9_determinism),
        ("speaker pooling invariance", c10_pooling_invariance),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
