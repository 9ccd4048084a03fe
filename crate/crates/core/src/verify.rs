//! Self-check suites run by `vqsc verify`.
//!
//! Each suite returns one [`Check`] per property; a suite passes when all of
//! its checks do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bitstream::{self, BitstreamError, PackedStream};
use crate::dsp::{compress_sample, expand_symbol, FULL_SCALE};
use crate::grad::{grad_check, ConvMode, GradError, Tape, Tensor, Var};
use crate::model::{quantize_with, CodeSequence, ModelConfig, TieBreak};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const MULAW_MAX_ERROR: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Mulaw,
    Vq,
    Grad,
    Bitstream,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Mulaw, Suite::Vq, Suite::Grad, Suite::Bitstream];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Mulaw => "mulaw",
            Suite::Vq => "vq",
            Suite::Grad => "grad",
            Suite::Bitstream => "bitstream",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Tie-break used by the quantizer under test.
    pub tie_break: TieBreak,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Vec<Check> {
    match suite {
        Suite::Mulaw => mulaw_checks(),
        Suite::Vq => vq_checks(opts.seed, opts.tie_break),
        Suite::Grad => grad_checks(opts.seed),
        Suite::Bitstream => bitstream_checks(opts.seed),
    }
}

fn check(suite: Suite, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check { suite: suite.name(), name: name.into(), passed, detail: detail.into() }
}

pub fn mulaw_checks() -> Vec<Check> {
    let s = Suite::Mulaw;
    let mut prev = 0u8;
    let mut monotone = true;
    let mut max_err = 0.0f64;
    let mut worst = 0i16;
    for x in i16::MIN..=i16::MAX {
        let sym = compress_sample(x);
        if x > i16::MIN && sym < prev {
            monotone = false;
        }
        prev = sym;
        let err = (expand_symbol(sym) as f64 - x as f64).abs() / FULL_SCALE;
        if err > max_err {
            max_err = err;
            worst = x;
        }
    }
    let bad_symbols: Vec<u8> = (0..=255u8).filter(|&y| compress_sample(expand_symbol(y)) != y).collect();
    vec![
        check(s, "compressor monotone over all 65536 inputs", monotone, ""),
        check(
            s,
            "max normalized round-trip error",
            max_err <= MULAW_MAX_ERROR,
            format!("{max_err:.6} at input {worst} (limit {MULAW_MAX_ERROR})"),
        ),
        check(
            s,
            "compress(expand(y)) == y for all 256 symbols",
            bad_symbols.is_empty(),
            format!("{} mismatches", bad_symbols.len()),
        ),
    ]
}

/// Lowest index among the minimum-distance rows.
fn brute_force_nearest(book: &Tensor, v: &[f64]) -> usize {
    let dists: Vec<f64> =
        (0..book.shape()[0]).map(|r| book.row(r).iter().zip(v).map(|(e, x)| (x - e).powi(2)).sum()).collect();
    let min = dists.iter().copied().fold(f64::INFINITY, f64::min);
    dists.iter().position(|&d| d == min).expect("non-empty codebook")
}

pub fn vq_checks(seed: u64, tie: TieBreak) -> Vec<Check> {
    let s = Suite::Vq;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mismatches, mut value_errors, mut ties) = (0, 0, 0);
    let mut first = String::new();
    let instances = 1000;
    for case in 0..instances {
        let k = rng.random_range(1..=64);
        let dim = rng.random_range(1..=8);
        let maps = rng.random_range(1..=3);
        let frames = rng.random_range(1..=6);
        let grid = case % 2 == 0;
        let mut draw = || if grid { rng.random_range(-2..=2) as f64 } else { rng.random_range(-1.0..1.0) };
        let mut books: Vec<Tensor> = Vec::with_capacity(maps);
        for _ in 0..maps {
            books.push(Tensor::new(vec![k, dim], (0..k * dim).map(|_| draw()).collect()).expect("shape"));
        }
        let z = Tensor::new(vec![maps * dim, frames], (0..maps * dim * frames).map(|_| draw()).collect()).expect("shape");
        let mut tape = Tape::new();
        let cbs: Vec<Var> = books.iter().map(|b| tape.constant(b.clone())).collect();
        let zv = tape.constant(z.clone());
        let q = match quantize_with(&mut tape, zv, &cbs, tie) {
            Ok(q) => q,
            Err(e) => {
                mismatches += 1;
                first = format!("case {case}: {e}");
                continue;
            }
        };
        let qv = tape.value(q.quantized);
        for t in 0..frames {
            let col = z.column(t);
            for m in 0..maps {
                let sub = &col[m * dim..(m + 1) * dim];
                let expect = brute_force_nearest(&books[m], sub);
                let min = {
                    let e = books[m].row(expect);
                    e.iter().zip(sub).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                };
                let tied = (0..k)
                    .filter(|&r| books[m].row(r).iter().zip(sub).map(|(a, b)| (a - b).powi(2)).sum::<f64>() == min)
                    .count();
                if tied > 1 {
                    ties += 1;
                }
                let got = q.indices[t][m] as usize;
                if got != expect {
                    mismatches += 1;
                    if first.is_empty() {
                        first = format!("case {case} frame {t} map {m}: got {got}, expected {expect}");
                    }
                }
                if (0..dim).any(|c| qv.at(m * dim + c, t) != books[m].at(got, c)) {
                    value_errors += 1;
                }
            }
        }
    }
    vec![
        check(
            s,
            format!("indices equal brute-force nearest neighbour on {instances} instances"),
            mismatches == 0,
            format!("{mismatches} mismatches, {ties} tied selections{}", if first.is_empty() { String::new() } else { format!("; first: {first}") }),
        ),
        check(s, "quantized values are the selected codewords", value_errors == 0, format!("{value_errors} errors")),
    ]
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Same as [`random`] but bounded away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn to_scalar(tape: &mut Tape, v: Var, target: &Tensor) -> Result<Var, GradError> {
    let t = tape.constant(target.clone());
    tape.mse(v, t, None)
}

type GradFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, GradError>>;

/// Named finite-difference cases: one per differentiable op plus a
/// three-layer convolutional composite.
pub fn grad_cases(seed: u64) -> Vec<(&'static str, GradFn, Vec<Tensor>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases: Vec<(&'static str, GradFn, Vec<Tensor>)> = Vec::new();
    let t35 = random(r, &[3, 5]);
    let t_conv = random(r, &[4, 4]);
    cases.push((
        "conv1d causal dilated",
        Box::new(move |tp, v| {
            let y = tp.conv1d(v[0], v[1], v[2], 1, 2, ConvMode::Causal)?;
            to_scalar(tp, y, &t_conv)
        }),
        vec![random(r, &[2, 4]), random(r, &[4, 2, 3]), random(r, &[4])],
    ));
    let t_str = random(r, &[3, 3]);
    cases.push((
        "conv1d causal strided",
        Box::new(move |tp, v| {
            let y = tp.conv1d(v[0], v[1], v[2], 2, 1, ConvMode::Causal)?;
            to_scalar(tp, y, &t_str)
        }),
        vec![random(r, &[2, 6]), random(r, &[3, 2, 4]), random(r, &[3])],
    ));
    let t_valid = random(r, &[2, 3]);
    cases.push((
        "conv1d valid",
        Box::new(move |tp, v| {
            let y = tp.conv1d(v[0], v[1], v[2], 2, 1, ConvMode::Valid)?;
            to_scalar(tp, y, &t_valid)
        }),
        vec![random(r, &[3, 7]), random(r, &[2, 3, 3]), random(r, &[2])],
    ));
    for (name, op) in [
        ("relu", 0u8),
        ("tanh", 1),
        ("sigmoid", 2),
        ("scale", 3),
    ] {
        let target = t35.clone();
        cases.push((
            name,
            Box::new(move |tp, v| {
                let y = match op {
                    0 => tp.relu(v[0]),
                    1 => tp.tanh(v[0]),
                    2 => tp.sigmoid(v[0]),
                    _ => tp.scale(v[0], -1.7),
                };
                to_scalar(tp, y, &target)
            }),
            vec![away_from_zero(r, &[3, 5])],
        ));
    }
    for (name, op) in [("add", 0u8), ("sub", 1), ("mul", 2)] {
        let target = t35.clone();
        cases.push((
            name,
            Box::new(move |tp, v| {
                let y = match op {
                    0 => tp.add(v[0], v[1])?,
                    1 => tp.sub(v[0], v[1])?,
                    _ => tp.mul(v[0], v[1])?,
                };
                to_scalar(tp, y, &target)
            }),
            vec![random(r, &[3, 5]), random(r, &[3, 5])],
        ));
    }
    let t3 = random(r, &[3]);
    cases.push((
        "mean_over_time",
        Box::new(move |tp, v| {
            let y = tp.mean_over_time(v[0])?;
            to_scalar(tp, y, &t3)
        }),
        vec![random(r, &[3, 5])],
    ));
    cases.push((
        "softmax_cross_entropy",
        Box::new(|tp, v| tp.softmax_cross_entropy(v[0], &[0, 5, 2, 5])),
        vec![random(r, &[6, 4])],
    ));
    cases.push(("mse", Box::new(|tp, v| tp.mse(v[0], v[1], None)), vec![random(r, &[2, 5]), random(r, &[2, 5])]));
    cases.push((
        "mse masked",
        Box::new(|tp, v| tp.mse(v[0], v[1], Some(&[true, false, true, true, false]))),
        vec![random(r, &[1, 5]), random(r, &[1, 5])],
    ));
    let t_gather = random(r, &[3, 5]);
    cases.push((
        "gather_rows",
        Box::new(move |tp, v| {
            let y = tp.gather_rows(v[0], &[1, 0, 3, 1, 1])?;
            to_scalar(tp, y, &t_gather)
        }),
        vec![random(r, &[4, 3])],
    ));
    let t_rep = random(r, &[2, 9]);
    cases.push((
        "repeat_time",
        Box::new(move |tp, v| {
            let y = tp.repeat_time(v[0], 3)?;
            to_scalar(tp, y, &t_rep)
        }),
        vec![random(r, &[2, 3])],
    ));
    let t_bc = random(r, &[3, 4]);
    cases.push((
        "broadcast_time",
        Box::new(move |tp, v| {
            let y = tp.broadcast_time(v[0], 4)?;
            to_scalar(tp, y, &t_bc)
        }),
        vec![random(r, &[3])],
    ));
    let t_cat = random(r, &[5, 3]);
    cases.push((
        "concat_channels",
        Box::new(move |tp, v| {
            let y = tp.concat_channels(v[0], v[1])?;
            to_scalar(tp, y, &t_cat)
        }),
        vec![random(r, &[2, 3]), random(r, &[3, 3])],
    ));
    let t_slice = random(r, &[2, 3]);
    cases.push((
        "slice_channels",
        Box::new(move |tp, v| {
            let y = tp.slice_channels(v[0], 1, 2)?;
            to_scalar(tp, y, &t_slice)
        }),
        vec![random(r, &[4, 3])],
    ));
    let t_reshape = random(r, &[6]);
    cases.push((
        "reshape",
        Box::new(move |tp, v| {
            let y = tp.reshape(v[0], &[6])?;
            to_scalar(tp, y, &t_reshape)
        }),
        vec![random(r, &[2, 3])],
    ));
    let t_stack = random(r, &[2, 8]);
    cases.push((
        "three-layer conv composite",
        Box::new(move |tp, v| {
            let h = tp.conv1d(v[0], v[1], v[2], 1, 1, ConvMode::Causal)?;
            let h = tp.tanh(h);
            let h = tp.conv1d(h, v[3], v[4], 1, 2, ConvMode::Causal)?;
            let h = tp.sigmoid(h);
            let h = tp.conv1d(h, v[5], v[6], 1, 4, ConvMode::Causal)?;
            to_scalar(tp, h, &t_stack)
        }),
        vec![
            random(r, &[1, 8]),
            random(r, &[3, 1, 2]),
            random(r, &[3]),
            random(r, &[3, 3, 2]),
            random(r, &[3]),
            random(r, &[2, 3, 2]),
            random(r, &[2]),
        ],
    ));
    cases
}

pub fn grad_checks(seed: u64) -> Vec<Check> {
    let s = Suite::Grad;
    let mut out: Vec<Check> = grad_cases(seed)
        .into_iter()
        .map(|(name, f, inputs)| match grad_check(f, &inputs, GRAD_STEP, GRAD_TOLERANCE) {
            Ok(rep) => check(s, name, rep.passed, format!("max relative error {:.3e}", rep.max_rel_error())),
            Err(e) => check(s, name, false, e.to_string()),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
    let z = random(&mut rng, &[3, 4]);
    let q = random(&mut rng, &[3, 4]);
    let w = random(&mut rng, &[3, 4]);
    let upstream = |tape: &mut Tape, v: Var| -> Result<Var, GradError> {
        let wv = tape.constant(w.clone());
        let p = tape.mul(v, wv)?;
        let p = tape.tanh(p);
        to_scalar(tape, p, &Tensor::zeros(&[3, 4]))
    };
    let bypass = (|| -> Result<bool, GradError> {
        let mut a = Tape::new();
        let zv = a.variable(z.clone());
        let st = a.straight_through(zv, &q)?;
        let l = upstream(&mut a, st)?;
        a.backward(l)?;
        let mut b = Tape::new();
        let qv = b.variable(q.clone());
        let l = upstream(&mut b, qv)?;
        b.backward(l)?;
        let bits = |t: Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        Ok(bits(a.grad_or_zeros(zv)) == bits(b.grad_or_zeros(qv)))
    })();
    out.push(check(
        s,
        "straight_through passes the bypass gradient bit-for-bit",
        bypass.as_ref().is_ok_and(|&b| b),
        bypass.err().map(|e| e.to_string()).unwrap_or_default(),
    ));
    let detached = (|| -> Result<bool, GradError> {
        let mut t = Tape::new();
        let zv = t.variable(z.clone());
        let d = t.detach(zv);
        let y = t.add(d, zv)?;
        let l = to_scalar(&mut t, y, &q)?;
        t.backward(l)?;
        let mut u = Tape::new();
        let zv2 = u.variable(z.clone());
        let c = u.constant(z.clone());
        let y = u.add(c, zv2)?;
        let l = to_scalar(&mut u, y, &q)?;
        u.backward(l)?;
        Ok(t.grad_or_zeros(zv) == u.grad_or_zeros(zv2))
    })();
    out.push(check(
        s,
        "detach blocks gradient",
        detached.as_ref().is_ok_and(|&b| b),
        detached.err().map(|e| e.to_string()).unwrap_or_default(),
    ));
    out
}

fn random_stream(rng: &mut ChaCha8Rng) -> (ModelConfig, CodeSequence) {
    let k = if rng.random_bool(0.5) { rng.random_range(1..=300) } else { rng.random_range(1..=65535) };
    let maps = rng.random_range(1..=4);
    let extra = rng.random_range(0..=2);
    let cfg = ModelConfig {
        codebook_size: k,
        num_maps: maps,
        latent_dim: 4 * maps,
        speaker_codebook_size: rng.random_range(1..=1000),
        ..ModelConfig::tiny()
    }
    .with_extra_stride2(extra);
    let factor = cfg.downsampling_factor();
    let frames = rng.random_range(0..50);
    let codes = CodeSequence {
        frames: (0..frames).map(|_| (0..maps).map(|_| rng.random_range(0..k) as u16).collect()).collect(),
        speaker_index: rng.random_range(0..cfg.speaker_codebook_size) as u16,
        num_samples: if frames == 0 { 0 } else { (frames * factor - rng.random_range(0..factor)) as u32 },
    };
    (cfg, codes)
}

pub fn bitstream_checks(seed: u64) -> Vec<Check> {
    let s = Suite::Bitstream;
    let mut out = Vec::new();
    let rates: Vec<f64> = (0..3).map(|n| bitstream::bitrate(&ModelConfig::default().with_extra_stride2(n))).collect();
    out.push(check(s, "payload rates 1600/800/400 bps", rates == [1600.0, 800.0, 400.0], format!("{rates:?}")));

    let k3 = ModelConfig { codebook_size: 3, num_maps: 1, latent_dim: 4, ..ModelConfig::tiny() };
    let codes = CodeSequence { frames: vec![vec![0], vec![1], vec![2], vec![0]], speaker_index: 0, num_samples: 640 };
    let payload = bitstream::pack(&codes, &k3).map(|p| p.payload);
    out.push(check(s, "K=3 worked example packs to 0x18", payload == Ok(vec![0x18]), format!("{payload:02x?}")));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = 10_000;
    let mut failures = 0;
    let mut first = String::new();
    for i in 0..cases {
        let (cfg, codes) = random_stream(&mut rng);
        let result = bitstream::pack(&codes, &cfg)
            .and_then(|p| PackedStream::from_bytes(&p.to_bytes()))
            .and_then(|p| bitstream::unpack(&p));
        let ok = matches!(&result, Ok((back, layout)) if *back == codes && layout.check_matches(&cfg).is_ok());
        if !ok {
            failures += 1;
            if first.is_empty() {
                first = format!("; first: case {i}: {result:?}");
            }
        }
    }
    out.push(check(s, format!("pack/unpack round trip on {cases} random streams"), failures == 0, format!("{failures} failures{first}")));

    let cfg = ModelConfig::default();
    let codes = CodeSequence { frames: vec![vec![3, 250]; 3], speaker_index: 9, num_samples: 400 };
    let bytes = bitstream::pack(&codes, &cfg).expect("valid").to_bytes();
    let mut errors = Vec::new();
    let mut b = bytes.clone();
    b[1] ^= 0xff;
    errors.push(("bad magic", matches!(PackedStream::from_bytes(&b), Err(BitstreamError::BadMagic(_)))));
    let mut b = bytes.clone();
    b[4] = 9;
    errors.push(("bad version", matches!(PackedStream::from_bytes(&b), Err(BitstreamError::UnsupportedVersion(9)))));
    errors.push((
        "truncated",
        matches!(PackedStream::from_bytes(&bytes[..bytes.len() - 1]), Err(BitstreamError::Truncated { .. })),
    ));
    let mut b = bytes.clone();
    b.push(0);
    errors.push(("trailing data", matches!(PackedStream::from_bytes(&b), Err(BitstreamError::TrailingData(1)))));
    let k3_bytes = bitstream::pack(
        &CodeSequence { frames: vec![vec![2]], speaker_index: 0, num_samples: 160 },
        &k3,
    )
    .expect("valid")
    .to_bytes();
    let mut b = k3_bytes;
    *b.last_mut().expect("payload") |= 0x01;
    let padded = PackedStream::from_bytes(&b).and_then(|p| bitstream::unpack(&p).map(|_| ()));
    errors.push(("nonzero padding", padded == Err(BitstreamError::NonzeroPadding)));
    let failed: Vec<&str> = errors.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    out.push(check(s, "corruptions map to distinct errors", failed.is_empty(), failed.join(", ")));
    out
}
