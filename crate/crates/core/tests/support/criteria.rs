//! The eight acceptance checks. Each returns a one-line summary on success
//! and the first violation found on failure.

use std::time::Duration;

use rand::Rng;

use safe_edit_core::edit::{
    run_localized_edit, ColorKeyedAttention, EditPlan, EditSchedule, Latent, MaskPolicy,
    ToyDenoiser,
};
use safe_edit_core::eval::{
    aggregate_detector_scores, alignment_report, background_mask, lpips_bg, moderation_rates,
    psnr_bg, read_judgments, ssim_bg, BackgroundMask, Condition, DetectorScoreTable, PromptPair,
    RandomProjectionLpips, ScoreRow,
};
use safe_edit_core::grid::{BinaryGrid, RealGrid};
use safe_edit_core::mask::{
    apply_gate, build_laplacian, gate_from_box, refine, CellRect, Confidence, LatentGate,
    LatentMask, MaskConfig, RefinementParams, SelfAffinity,
};
use safe_edit_core::protocol::{
    parse_detections, to_pixel_box, validate_detection, ConceptDetection, DetectorBox, PixelBox,
    Violation,
};

use super::*;

pub type Check = Result<String, String>;

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub limit: Option<Duration>,
    pub run: fn() -> Check,
}

/// Criteria 1 to 7. The end-to-end run lives with the CLI tests.
pub const CORE: [Criterion; 7] = [
    Criterion {
        id: 1,
        name: "laplacian solver suite",
        limit: Some(Duration::from_secs(10)),
        run: solver_suite,
    },
    Criterion {
        id: 2,
        name: "gating invariants",
        limit: Some(Duration::from_secs(5)),
        run: gating_invariants,
    },
    Criterion {
        id: 3,
        name: "blending and background exactness",
        limit: Some(Duration::from_secs(5)),
        run: blending_exactness,
    },
    Criterion {
        id: 4,
        name: "spilling regression",
        limit: Some(Duration::from_secs(10)),
        run: spilling_regression,
    },
    Criterion {
        id: 5,
        name: "metric oracles",
        limit: None,
        run: metric_oracles,
    },
    Criterion {
        id: 6,
        name: "reported arithmetic",
        limit: None,
        run: reported_arithmetic,
    },
    Criterion {
        id: 7,
        name: "protocol suite",
        limit: None,
        run: protocol_suite,
    },
];

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn solver_suite() -> Check {
    let mut rng = rng(0x501);
    let mut worst_cg = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(2..=64);
        let (raw, dense) = random_affinity(&mut rng, n);
        let aff = SelfAffinity::from_triplets(n, raw).map_err(|e| e.to_string())?;
        let l = build_laplacian(&aff);
        let row_sum = l
            .mul_vec(&vec![1.0; n])
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        ensure!(
            row_sum <= 1e-12,
            "case {case}: Laplacian row sum {row_sum:e}"
        );

        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let lambda = 10f64.powf(rng.random_range(-2.0..1.0));
        let grid = RealGrid::new(1, n, m.clone()).unwrap();
        let params = RefinementParams {
            lambda,
            confidence: Confidence::Explicit(weights.clone()),
            solver_tol: 1e-12,
            max_iter: 10_000,
        };
        let got = refine(&grid, &aff, &params).map_err(|e| format!("case {case}: {e}"))?;
        let rhs: Vec<f64> = weights.iter().zip(&m).map(|(w, v)| w * v).collect();
        let want = dense_solve(&dense_system(&dense, &weights, lambda), &rhs);
        let err = max_abs_diff(got.values.as_slice(), &want);
        worst_cg = worst_cg.max(err);
        ensure!(
            err <= 1e-8,
            "case {case} (n = {n}): CG vs dense max-abs {err:e}"
        );

        // Maximum principle at a loose and at a tight tolerance.
        let (lo, hi) = m
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        for tol in [1e-6, 1e-12] {
            let p = RefinementParams {
                solver_tol: tol,
                ..params.clone()
            };
            let x = refine(&grid, &aff, &p).map_err(|e| format!("case {case}: {e}"))?;
            let slack = 10.0 * tol;
            ensure!(
                x.values
                    .as_slice()
                    .iter()
                    .all(|&v| v >= lo - slack && v <= hi + slack),
                "case {case}: maximum principle broken at tol {tol:e}"
            );
        }

        let zero = RefinementParams {
            lambda: 0.0,
            ..params.clone()
        };
        let x = refine(&grid, &aff, &zero).map_err(|e| e.to_string())?;
        let err = max_abs_diff(x.values.as_slice(), &m);
        ensure!(
            err <= 1e-10,
            "case {case}: lambda = 0 moved the map by {err:e}"
        );

        let c = rng.random_range(0.0..1.0);
        let flat = RealGrid::filled(1, n, c);
        let x = refine(&flat, &aff, &params).map_err(|e| e.to_string())?;
        let err = x
            .values
            .as_slice()
            .iter()
            .map(|v| (v - c).abs())
            .fold(0.0, f64::max);
        ensure!(err <= 1e-10, "case {case}: constant map drifted by {err:e}");
    }
    Ok(format!("200 systems, worst CG vs dense {worst_cg:.1e}"))
}

pub fn gating_invariants() -> Check {
    let mut rng = rng(0x6a7e);
    for case in 0..1000 {
        let h = rng.random_range(1..=64usize);
        let w = rng.random_range(1..=64usize);
        let density = rng.random_range(0.0..1.0);
        let m = LatentMask::new(BinaryGrid::from_fn(h, w, |_, _| rng.random_bool(density)));
        let g = if case % 2 == 0 {
            let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
            let rect = CellRect {
                row_min: r0,
                row_max: rng.random_range(r0..h),
                col_min: c0,
                col_max: rng.random_range(c0..w),
            };
            LatentGate::from_rect(h, w, rect).map_err(|e| e.to_string())?
        } else {
            let (iw, ih) = (rng.random_range(1..=512u32), rng.random_range(1..=512u32));
            let x0 = rng.random_range(0.0..iw as f64);
            let y0 = rng.random_range(0.0..ih as f64);
            let pb = PixelBox {
                x_min: x0,
                y_min: y0,
                x_max: rng
                    .random_range(x0..=iw as f64)
                    .max(x0 + f64::EPSILON * iw as f64)
                    .min(iw as f64),
                y_max: rng
                    .random_range(y0..=ih as f64)
                    .max(y0 + f64::EPSILON * ih as f64)
                    .min(ih as f64),
            };
            ensure!(
                pb.within(iw, ih),
                "case {case}: generated box {pb:?} outside the image"
            );
            gate_from_box(&pb, iw, ih, h, w).map_err(|e| format!("case {case}: {e}"))?
        };
        let rect = g.rect().ok_or_else(|| format!("case {case}: empty gate"))?;
        let out = apply_gate(&m, &g).map_err(|e| e.to_string())?;
        ensure!(
            out.count_ones() <= m.count_ones(),
            "case {case}: |M'| > |M|"
        );
        ensure!(
            out.count_ones() <= g.count_ones(),
            "case {case}: |M'| > |G|"
        );
        for r in 0..h {
            for c in 0..w {
                let inside = rect.contains(r, c);
                let want = m.bits.get(r, c) && inside;
                ensure!(
                    out.bits.get(r, c) == want,
                    "case {case}: cell ({r}, {c}) differs from M and G"
                );
                if inside {
                    ensure!(
                        out.bits.get(r, c) == m.bits.get(r, c),
                        "case {case}: shape changed inside the gate"
                    );
                }
            }
        }
    }
    Ok("1000 mask/gate pairs".into())
}

fn toy(alpha: f64, shape: (usize, usize, usize), p_src: Latent, p_tgt: Latent) -> ToyDenoiser {
    ToyDenoiser::new(alpha, shape)
        .and_then(|t| t.with_pattern("image of a source", p_src))
        .and_then(|t| t.with_pattern("image of a target", p_tgt))
        .expect("valid toy backend")
}

pub fn toy_detection() -> ConceptDetection {
    ConceptDetection {
        label: "thing".into(),
        source_prompt: "image of a source".into(),
        target_prompt: "image of a target".into(),
        blend_words: vec!["source".into(), "target".into()],
        bbox: DetectorBox::new(0, 0, 1000, 500).unwrap(),
    }
}

pub fn blending_exactness() -> Check {
    const T: usize = 10;
    const ALPHA: f64 = 0.3;
    let mut rng = rng(0xb1e);
    let mut cells = 0usize;
    for case in 0..20 {
        let (c, h, w) = (3, 16, 16);
        let z0 = random_latent(&mut rng, c, h, w, 0.1, 1.0);
        let p_src = random_latent(&mut rng, c, h, w, 0.1, 1.0);
        let p_tgt = random_latent(&mut rng, c, h, w, 0.1, 1.0);
        let mut backend = toy(ALPHA, (c, h, w), p_src.clone(), p_tgt.clone());
        let gate = LatentGate::from_rect(
            h,
            w,
            CellRect {
                row_min: 0,
                row_max: h - 1,
                col_min: 0,
                col_max: w / 2 - 1,
            },
        )
        .map_err(|e| e.to_string())?;
        let mask = if case % 2 == 0 {
            LatentMask::new(BinaryGrid::ones(h, w))
        } else {
            LatentMask::new(BinaryGrid::from_fn(h, w, |_, _| rng.random_bool(0.5)))
        };
        let plan = EditPlan {
            detection: toy_detection(),
            gate,
            schedule: EditSchedule {
                total_steps: T,
                blend_from: 0,
                mask_policy: MaskPolicy::Fixed,
            },
            mask: MaskConfig::default(),
            fixed_mask: Some(mask.clone()),
        };
        let out = run_localized_edit(&mut backend, &plan, &z0).map_err(|e| e.to_string())?;
        let again = run_localized_edit(&mut backend, &plan, &z0).map_err(|e| e.to_string())?;
        ensure!(out.edited == again.edited, "case {case}: non-deterministic");
        let m_prime = apply_gate(&mask, &gate).map_err(|e| e.to_string())?;
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let e = out.edited.get(ch, r, col);
                    let z = z0.get(ch, r, col);
                    let src = closed_form(p_src.get(ch, r, col), z, ALPHA, T as i32);
                    ensure!(
                        rel_close(out.source.get(ch, r, col), src, 1e-9),
                        "case {case}: source branch off its closed form at ({ch}, {r}, {col})"
                    );
                    if m_prime.bits.get(r, col) {
                        let tgt = closed_form(p_tgt.get(ch, r, col), z, ALPHA, T as i32);
                        ensure!(
                            rel_close(e, tgt, 1e-9),
                            "case {case}: ({ch}, {r}, {col}) = {e}, closed form {tgt}"
                        );
                        cells += 1;
                    } else {
                        ensure!(
                            e.to_bits() == out.source.get(ch, r, col).to_bits(),
                            "case {case}: ({ch}, {r}, {col}) outside M' differs from the source reconstruction"
                        );
                    }
                }
            }
        }
        // Full mask: every gate cell follows the target closed form.
        if case % 2 == 0 {
            ensure!(
                m_prime.count_ones() == gate.count_ones(),
                "case {case}: full mask lost gate cells"
            );
        }
    }
    Ok(format!(
        "20 runs, {cells} blended values on the closed form"
    ))
}

/// Edits the first red square of the twin scene with and without the box
/// gate. Returns the latent MSE at the second square, ungated then gated,
/// and the MSE at the first square under gating.
pub fn spill_mse() -> Result<(f64, f64, f64), String> {
    let img = twin_scene();
    let z0 = latent_of(&img);
    let shape = z0.shape();
    let attn = ColorKeyedAttention::default();
    let red = unit_color(RED);
    let (pair, aff) = attn.fixture(&z0, &red, &red).map_err(|e| e.to_string())?;
    let gray = unit_color(GRAY);
    let target = Latent::from_fn(shape.0, shape.1, shape.2, |ch, _, _| gray[ch]);
    let detection = ConceptDetection {
        label: "Weapon".into(),
        source_prompt: "image of a person holding a gun".into(),
        target_prompt: "image of a person holding nothing".into(),
        blend_words: vec!["gun".into(), "nothing".into()],
        // y 8..40, x 0..32 on the 64 px canvas.
        bbox: DetectorBox::new(125, 0, 625, 500).unwrap(),
    };
    let pb = to_pixel_box(detection.bbox, SCENE as u32, SCENE as u32).map_err(|e| e.to_string())?;
    let boxed =
        gate_from_box(&pb, SCENE as u32, SCENE as u32, SCENE, SCENE).map_err(|e| e.to_string())?;

    let region = |r: (usize, usize, usize, usize)| {
        BinaryGrid::from_fn(SCENE, SCENE, |y, x| {
            (r.0..r.1).contains(&x) && (r.2..r.3).contains(&y)
        })
    };
    let run = |gate: LatentGate| -> Result<Latent, String> {
        let mut backend = ToyDenoiser::new(0.3, shape)
            .and_then(|t| t.with_pattern(detection.target_prompt.clone(), target.clone()))
            .map_err(|e| e.0)?
            .with_default_attention(pair.clone(), aff.clone())
            .reconstruct_source(true);
        let plan = EditPlan {
            detection: detection.clone(),
            gate,
            schedule: EditSchedule::default(),
            mask: MaskConfig::default(),
            fixed_mask: None,
        };
        Ok(run_localized_edit(&mut backend, &plan, &z0)
            .map_err(|e| e.to_string())?
            .edited)
    };
    let ungated = run(LatentGate::full(SCENE, SCENE))?;
    let gated = run(boxed)?;
    let second = region(SECOND);
    let first = region(FIRST);
    Ok((
        ungated.region_mse(&z0, &second).unwrap(),
        gated.region_mse(&z0, &second).unwrap(),
        gated.region_mse(&z0, &first).unwrap(),
    ))
}

pub fn spilling_regression() -> Check {
    let (ungated, gated, target) = spill_mse()?;
    ensure!(
        ungated > 0.01,
        "ungated edit left the look-alike nearly intact (MSE {ungated:.4})"
    );
    ensure!(
        gated == 0.0,
        "gated edit touched the look-alike (MSE {gated:e})"
    );
    ensure!(
        target > 0.01,
        "gated edit did not change the target instance (MSE {target:.4})"
    );
    Ok(format!(
        "look-alike MSE ungated {ungated:.4}, gated {gated}; target MSE {target:.4}"
    ))
}

pub fn metric_oracles() -> Check {
    let mut rng = rng(0x55_1a);
    let mut worst = (0.0f64, 0.0f64);
    for case in 0..100 {
        let a = random_image(&mut rng, 32, 32);
        let amp = rng.random_range(1..=128);
        let b = perturbed(&mut rng, &a, amp);
        let mask = if case % 2 == 0 {
            BackgroundMask::full(32, 32)
        } else {
            let (x0, y0) = (
                rng.random_range(0..22) as f64,
                rng.random_range(0..22) as f64,
            );
            let pb = PixelBox {
                x_min: x0,
                y_min: y0,
                x_max: x0 + rng.random_range(1..=10) as f64,
                y_max: y0 + rng.random_range(1..=10) as f64,
            };
            background_mask(32, 32, &[pb]).map_err(|e| e.to_string())?
        };
        let p = psnr_bg(&a, &b, &mask).map_err(|e| e.to_string())?;
        let po = naive_psnr(&a, &b, &mask);
        let dp = if p == po { 0.0 } else { (p - po).abs() };
        ensure!(dp <= 1e-6, "case {case}: PSNR {p} vs oracle {po}");
        let s = ssim_bg(&a, &b, &mask).map_err(|e| e.to_string())?;
        let so = naive_ssim(&a, &b, &mask).ok_or("oracle found no window")?;
        ensure!(
            (s - so).abs() <= 1e-6,
            "case {case}: SSIM {s} vs oracle {so}"
        );
        worst = (worst.0.max(dp), worst.1.max((s - so).abs()));
    }

    let a = RgbImage::from_fn(32, 32, |_, _| {
        Rgb(std::array::from_fn(|_| rng.random_range(0..=254u8)))
    });
    let b = RgbImage::from_fn(32, 32, |x, y| Rgb(a.get_pixel(x, y).0.map(|v| v + 1)));
    let offset = psnr_bg(&a, &b, &BackgroundMask::full(32, 32)).map_err(|e| e.to_string())?;
    ensure!(
        (offset - 48.1308).abs() <= 1e-4,
        "uniform offset PSNR {offset}"
    );

    let inverted = RgbImage::from_fn(32, 32, |x, y| Rgb(a.get_pixel(x, y).0.map(|v| 255 - v)));
    let s = ssim_bg(&a, &inverted, &BackgroundMask::full(32, 32)).map_err(|e| e.to_string())?;
    ensure!(s < 0.5, "inverted image SSIM {s} not below 0.5");

    let pb = PixelBox {
        x_min: 8.0,
        y_min: 8.0,
        x_max: 20.0,
        y_max: 20.0,
    };
    let mask = background_mask(32, 32, &[pb]).map_err(|e| e.to_string())?;
    let mut boxed = a.clone();
    for y in 8..20 {
        for x in 8..20 {
            boxed.put_pixel(x, y, Rgb([rng.random(), rng.random(), rng.random()]));
        }
    }
    let lp = RandomProjectionLpips::default();
    let p = psnr_bg(&a, &boxed, &mask).map_err(|e| e.to_string())?;
    let s = ssim_bg(&a, &boxed, &mask).map_err(|e| e.to_string())?;
    let l = lpips_bg(&lp, &a, &boxed, &mask).map_err(|e| e.to_string())?;
    ensure!(
        p == f64::INFINITY && s == 1.0 && l == 0.0,
        "box-only change moved background metrics: {p} {s} {l}"
    );
    Ok(format!(
        "100 pairs, worst PSNR diff {:.1e} dB, worst SSIM diff {:.1e}; offset PSNR {:.4} dB",
        worst.0, worst.1, offset
    ))
}

fn fmt4(v: f64) -> String {
    format!("{:.4}", v + 0.0)
}

pub fn reported_arithmetic() -> Check {
    let rows = IDENTITY_ROWS
        .iter()
        .map(|&(entity, original, general, specific)| ScoreRow {
            entity: entity.into(),
            original,
            general,
            specific,
        })
        .collect();
    let table = DetectorScoreTable::new(rows).map_err(|e| e.to_string())?;
    let s = aggregate_detector_scores(&table).map_err(|e| e.to_string())?;
    ensure!(
        (s.mean_general - 0.15).abs() <= 1e-12,
        "mean general {}",
        s.mean_general
    );
    ensure!(
        (s.mean_specific - 0.02).abs() <= 1e-12,
        "mean specific {}",
        s.mean_specific
    );
    ensure!(
        format!("{:.2}/{:.2}", s.mean_general, s.mean_specific) == "0.15/0.02",
        "printed means differ"
    );
    let suppressed = s.rows.iter().filter(|r| r.suppressed).count();
    ensure!(suppressed == 8, "{suppressed} rows flagged as suppressed");

    let mut worst = 0.0f64;
    for row in &ALIGNMENT_ROWS {
        // Cosines chosen so that the deltas and the unsafe drop are the
        // printed values.
        let unsafe_orig = 0.30;
        let unsafe_edit = unsafe_orig - row.unsafe_reduction;
        let mut emb = PinnedEmbedder::new();
        emb.pin("unsafe", unsafe_orig, unsafe_edit);
        emb.pin(
            "safe",
            unsafe_orig + row.delta_orig,
            unsafe_edit + row.delta_sys,
        );
        let r = alignment_report(
            &emb,
            &PinnedEmbedder::original(),
            &PinnedEmbedder::edited(),
            &[PromptPair::new("unsafe", "safe")],
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            (r.delta_orig - row.delta_orig).abs() <= 1e-12,
            "{}: delta_orig {}",
            row.concept,
            r.delta_orig
        );
        ensure!(
            (r.delta_sys - row.delta_sys).abs() <= 1e-12,
            "{}: delta_sys {}",
            row.concept,
            r.delta_sys
        );
        ensure!(
            (r.unsafe_reduction - row.unsafe_reduction).abs() <= 1e-12,
            "{}: unsafe {}",
            row.concept,
            r.unsafe_reduction
        );
        ensure!(
            r.gain == r.delta_sys - r.delta_orig,
            "{}: gain identity broken",
            row.concept
        );
        if row.exact {
            ensure!(
                fmt4(r.gain) == fmt4(row.gain),
                "{}: gain {} vs printed {}",
                row.concept,
                fmt4(r.gain),
                row.gain
            );
        } else {
            ensure!(
                (r.gain - row.gain).abs() <= 1e-3,
                "{}: gain {} vs printed {}",
                row.concept,
                r.gain,
                row.gain
            );
            worst = worst.max((r.gain - row.gain).abs());
        }
    }

    // Two concepts with deltas 0.2 and -0.1 average to 0.05.
    let mut emb = PinnedEmbedder::new();
    emb.pin("u1", 0.1, 0.1);
    emb.pin("s1", 0.3, 0.3);
    emb.pin("u2", 0.2, 0.2);
    emb.pin("s2", 0.1, 0.1);
    let r = alignment_report(
        &emb,
        &PinnedEmbedder::original(),
        &PinnedEmbedder::edited(),
        &[PromptPair::new("u1", "s1"), PromptPair::new("u2", "s2")],
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        (r.delta_orig - 0.05).abs() <= 1e-12,
        "two-concept mean {}",
        r.delta_orig
    );

    let records = read_judgments(MODERATION_CSV.as_bytes()).map_err(|e| e.to_string())?;
    let check = |exclude: bool, rec: f64, sup: f64| -> Result<(), String> {
        let m =
            moderation_rates(&records, Condition::Edited, exclude).map_err(|e| e.to_string())?;
        ensure!(m.n == 630, "{} edited judgments", m.n);
        ensure!(
            (m.recognizable_pct - rec).abs() <= 0.01,
            "recognizable {:.4}% vs {rec}%",
            m.recognizable_pct
        );
        ensure!(
            (m.suppression_pct - sup).abs() <= 0.01,
            "suppression {:.4}% vs {sup}%",
            m.suppression_pct
        );
        ensure!(
            m.suppression_pct == 100.0 - m.recognizable_pct,
            "rates do not sum to 100"
        );
        Ok(())
    };
    check(false, 15.40, 84.60)?;
    check(true, 10.16, 89.84)?;
    Ok(format!(
        "means 0.15/0.02; three gains exact, others within {worst:.4}; moderation 15.40/84.60 and 10.16/89.84"
    ))
}

pub fn protocol_suite() -> Check {
    let cases = protocol_cases();
    ensure!(cases.len() >= 50, "corpus has only {} cases", cases.len());
    let mut ok = 0;
    for case in &cases {
        let got = parse_detections(&case.raw);
        ensure!(
            case.expect.matches(&got),
            "{}: expected {:?}, got {:?}",
            case.name,
            case.expect,
            got
        );
        if let Ok(set) = got {
            let again = parse_detections(&set.to_wire())
                .map_err(|e| format!("{}: re-parse failed: {e}", case.name))?;
            ensure!(again == set, "{}: round trip changed the set", case.name);
            ok += 1;
        }
    }

    let det = |src: &str, tgt: &str, words: &[&str]| ConceptDetection {
        label: "x".into(),
        source_prompt: src.into(),
        target_prompt: tgt.into(),
        blend_words: words.iter().map(|w| w.to_string()).collect(),
        bbox: DetectorBox::new(0, 0, 1000, 1000).unwrap(),
    };
    let accepted = [
        det(
            "image of a naked woman with a man",
            "image of a clothed woman with a man",
            &["naked", "clothed"],
        ),
        det(
            "image of a brad-pitt",
            "image of a generic person",
            &["brad-pitt", "person"],
        ),
    ];
    for d in &accepted {
        let v = validate_detection(d);
        ensure!(v.is_empty(), "{:?} rejected: {v:?}", d.blend_words);
    }
    let three = validate_detection(&det(
        "image of a brad pitt",
        "image of a person",
        &["brad", "pitt", "person"],
    ));
    ensure!(
        three.contains(&Violation::BlendWordCount { found: 3 }),
        "three-token blend accepted: {three:?}"
    );
    let member = validate_detection(&det(
        "image of a naked woman",
        "image of a clothed woman",
        &["naked", "dressed"],
    ));
    ensure!(
        member
            == vec![Violation::TargetWordMissing {
                word: "dressed".into()
            }],
        "non-member word: {member:?}"
    );

    let pb = to_pixel_box(DetectorBox::new(250, 100, 750, 900).unwrap(), 1024, 1024)
        .map_err(|e| e.to_string())?;
    ensure!(
        (pb.x_min, pb.x_max, pb.y_min, pb.y_max) == (102.4, 921.6, 256.0, 768.0),
        "pixel box {pb:?}"
    );
    let g = gate_from_box(&pb, 1024, 1024, 64, 64).map_err(|e| e.to_string())?;
    let want = CellRect {
        row_min: 16,
        row_max: 47,
        col_min: 6,
        col_max: 57,
    };
    ensure!(g.rect() == Some(want), "gate {:?}", g.rect());
    Ok(format!(
        "{} corpus cases ({ok} well-formed, round-tripped); worked gate cols 6..57 rows 16..47",
        cases.len()
    ))
}
