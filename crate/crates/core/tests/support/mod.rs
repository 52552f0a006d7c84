//! Oracles, generators and fixtures shared by the core integration tests and
//! the acceptance run in the CLI crate.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod criteria;

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_edit_core::edit::Latent;
use safe_edit_core::eval::{BackgroundMask, EmbeddingProvider, EvalError};
use safe_edit_core::protocol::{DetectionSet, Field, ProtocolError};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Dense LU solve of `a x = b`.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let m = DMatrix::from_fn(n, n, |r, c| a[r][c]);
    let x = m
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("system is non-singular");
    x.iter().copied().collect()
}

/// Random raw affinity on `n` nodes, connected through a weighted chain, plus
/// scattered asymmetric extra entries. Returns the raw triplets and the
/// symmetrized dense matrix `(A + A^T) / 2`.
pub fn random_affinity(rng: &mut impl Rng, n: usize) -> (Vec<(usize, usize, f64)>, Vec<Vec<f64>>) {
    let mut t = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let w = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            t.push((i, i + 1, w));
        } else {
            t.push((i + 1, i, w));
        }
    }
    let extra = rng.random_range(0..=2 * n);
    for _ in 0..extra {
        let r = rng.random_range(0..n);
        let c = rng.random_range(0..n);
        t.push((r, c, rng.random_range(0.0..1.0)));
    }
    let mut dense = vec![vec![0.0; n]; n];
    for &(r, c, v) in &t {
        dense[r][c] += 0.5 * v;
        dense[c][r] += 0.5 * v;
    }
    (t, dense)
}

/// `diag(weights) + lambda (D - A)` from a dense symmetric affinity.
pub fn dense_system(affinity: &[Vec<f64>], weights: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    let n = weights.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        let degree: f64 = affinity[i].iter().sum();
        for j in 0..n {
            m[i][j] = -lambda * affinity[i][j];
        }
        m[i][i] += lambda * degree + weights[i];
    }
    m
}

// ---------------------------------------------------------------------------
// Toy denoiser

/// `k` free steps of `z <- z + alpha (p - z)`.
pub fn closed_form(p: f64, z0: f64, alpha: f64, k: i32) -> f64 {
    p + (1.0 - alpha).powi(k) * (z0 - p)
}

pub fn random_latent(rng: &mut impl Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Latent {
    Latent::from_fn(c, h, w, |_, _, _| rng.random_range(lo..hi))
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Synthetic two-instance scene

pub const SCENE: usize = 64;
pub const RED: [u8; 3] = [200, 30, 30];
pub const GRAY: [u8; 3] = [128, 128, 128];
/// Target instance, `[x0, x1) x [y0, y1)` pixels.
pub const FIRST: (usize, usize, usize, usize) = (8, 24, 16, 32);
/// Look-alike instance outside the detector box.
pub const SECOND: (usize, usize, usize, usize) = (40, 56, 16, 32);

/// Textured background with two identical red squares.
pub fn twin_scene() -> RgbImage {
    let inside = |r: (usize, usize, usize, usize), x: usize, y: usize| {
        (r.0..r.1).contains(&x) && (r.2..r.3).contains(&y)
    };
    RgbImage::from_fn(SCENE as u32, SCENE as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if inside(FIRST, x, y) || inside(SECOND, x, y) {
            Rgb(RED)
        } else {
            let n = ((x * 7 + y * 13) % 17) as u8;
            Rgb([120 + n, 124 + n / 2, 118 + n])
        }
    })
}

pub fn latent_of(img: &RgbImage) -> Latent {
    let (w, h) = img.dimensions();
    Latent::from_fn(3, h as usize, w as usize, |ch, r, c| {
        img.get_pixel(c as u32, r as u32)[ch] as f64 / 255.0
    })
}

pub fn unit_color(c: [u8; 3]) -> Vec<f64> {
    c.iter().map(|&v| v as f64 / 255.0).collect()
}

// ---------------------------------------------------------------------------
// Metrics

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb(std::array::from_fn(|_| rng.random())))
}

/// `a` plus uniform noise in `[-amp, amp]`, clamped to 8 bits.
pub fn perturbed(rng: &mut impl Rng, a: &RgbImage, amp: i32) -> RgbImage {
    RgbImage::from_fn(a.width(), a.height(), |x, y| {
        let p = a.get_pixel(x, y).0;
        Rgb(p.map(|v| (v as i32 + rng.random_range(-amp..=amp)).clamp(0, 255) as u8))
    })
}

pub fn naive_psnr(a: &RgbImage, b: &RgbImage, mask: &BackgroundMask) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if mask.is_background(x, y) {
                for ch in 0..3 {
                    let d = a.get_pixel(x, y)[ch] as f64 - b.get_pixel(x, y)[ch] as f64;
                    se += d * d;
                    n += 1.0;
                }
            }
        }
    }
    if se == 0.0 {
        f64::INFINITY
    } else {
        20.0 * 255.0f64.log10() - 10.0 * (se / n).log10()
    }
}

fn luma(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Per-window SSIM written out directly: 11x11 Gaussian weights (sigma 1.5),
/// centered moments, averaged over windows lying wholly in the background.
pub fn naive_ssim(a: &RgbImage, b: &RgbImage, mask: &BackgroundMask) -> Option<f64> {
    const K: usize = 11;
    let g: Vec<f64> = (0..K)
        .map(|i| {
            let d = i as f64 - 5.0;
            (-d * d / (2.0 * 1.5 * 1.5)).exp()
        })
        .collect();
    let gs: f64 = g.iter().sum();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (w, h) = a.dimensions();
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(h as usize - K) {
        for c0 in 0..=(w as usize - K) {
            let mut all_bg = true;
            for i in 0..K {
                for j in 0..K {
                    all_bg &= mask.is_background((c0 + j) as u32, (r0 + i) as u32);
                }
            }
            if !all_bg {
                continue;
            }
            let wt = |i: usize, j: usize| g[i] * g[j] / (gs * gs);
            let px = |img: &RgbImage, i: usize, j: usize| {
                luma(img.get_pixel((c0 + j) as u32, (r0 + i) as u32))
            };
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    mx += wt(i, j) * px(a, i, j);
                    my += wt(i, j) * px(b, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..K {
                for j in 0..K {
                    let dx = px(a, i, j) - mx;
                    let dy = px(b, i, j) - my;
                    vx += wt(i, j) * dx * dx;
                    vy += wt(i, j) * dy * dy;
                    cov += wt(i, j) * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Embeddings pinned so that each prompt pair has prescribed cosines with
/// the original and the edited image.
///
/// Images are told apart by their first red value: 0 is the original, any
/// other value the edited image. Image vectors are the basis vectors `e0`
/// and `e1`; each text gets its own private padding axis so its norm is 1.
pub struct PinnedEmbedder {
    dim: usize,
    texts: Vec<(String, Vec<f64>)>,
}

impl PinnedEmbedder {
    pub fn new() -> Self {
        Self {
            dim: 64,
            texts: Vec::new(),
        }
    }

    /// Registers `text` with cosine `with_orig` to the original image and
    /// `with_edit` to the edited one.
    pub fn pin(&mut self, text: &str, with_orig: f64, with_edit: f64) {
        let axis = 2 + self.texts.len();
        assert!(axis < self.dim);
        let rest = 1.0 - with_orig * with_orig - with_edit * with_edit;
        assert!(rest >= 0.0, "cosines too large to pin");
        let mut v = vec![0.0; self.dim];
        v[0] = with_orig;
        v[1] = with_edit;
        v[axis] = rest.sqrt();
        self.texts.push((text.to_string(), v));
    }

    pub fn original() -> RgbImage {
        RgbImage::from_pixel(1, 1, Rgb([0, 0, 0]))
    }

    pub fn edited() -> RgbImage {
        RgbImage::from_pixel(1, 1, Rgb([1, 0, 0]))
    }
}

impl EmbeddingProvider for PinnedEmbedder {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, EvalError> {
        let mut v = vec![0.0; self.dim];
        v[usize::from(image.get_pixel(0, 0)[0] != 0)] = 1.0;
        Ok(v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        self.texts
            .iter()
            .find(|(t, _)| t == text)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| EvalError::Provider(format!("no pinned embedding for `{text}`")))
    }
}

/// One row of the contrastive alignment table: label, printed delta on the
/// original, printed delta after editing, printed gain, printed reduction
/// of unsafe similarity.
pub struct AlignmentRow {
    pub concept: &'static str,
    pub delta_orig: f64,
    pub delta_sys: f64,
    pub gain: f64,
    pub unsafe_reduction: f64,
    /// Whether the printed gain equals `delta_sys - delta_orig` at four
    /// decimals.
    pub exact: bool,
}

pub const ALIGNMENT_ROWS: [AlignmentRow; 6] = [
    AlignmentRow {
        concept: "Nudity",
        delta_orig: -0.0893,
        delta_sys: 0.0783,
        gain: 0.1666,
        unsafe_reduction: 0.1380,
        exact: false,
    },
    AlignmentRow {
        concept: "Famous Celebrities",
        delta_orig: -0.0601,
        delta_sys: 0.1534,
        gain: 0.2135,
        unsafe_reduction: 0.1153,
        exact: true,
    },
    AlignmentRow {
        concept: "Copyrighted Characters",
        delta_orig: -0.0738,
        delta_sys: 0.0609,
        gain: 0.1347,
        unsafe_reduction: 0.0767,
        exact: true,
    },
    AlignmentRow {
        concept: "Weapons",
        delta_orig: -0.1217,
        delta_sys: 0.0204,
        gain: 0.1420,
        unsafe_reduction: 0.0747,
        exact: false,
    },
    AlignmentRow {
        concept: "Smoking",
        delta_orig: -0.0996,
        delta_sys: -0.0902,
        gain: 0.0094,
        unsafe_reduction: 0.0057,
        exact: true,
    },
    AlignmentRow {
        concept: "Multi-Concept",
        delta_orig: -0.0396,
        delta_sys: 0.0198,
        gain: 0.0593,
        unsafe_reduction: 0.0458,
        exact: false,
    },
];

/// Character identity scores: original detection rate, general detection
/// rate after editing, specific identity rate after editing.
pub const IDENTITY_ROWS: [(&str, f64, f64, f64); 10] = [
    ("Batman", 1.00, 0.30, 0.00),
    ("Captain America", 1.00, 0.20, 0.10),
    ("Hello Kitty", 1.00, 0.20, 0.00),
    ("Hulk", 1.00, 0.00, 0.00),
    ("Iron Man", 1.00, 0.00, 0.00),
    ("Mickey Mouse", 1.00, 0.30, 0.00),
    ("Spider-Man", 1.00, 0.50, 0.10),
    ("Superman", 1.00, 0.00, 0.00),
    ("Thor", 1.00, 0.00, 0.00),
    ("Wonder Woman", 1.00, 0.00, 0.00),
];

pub const MODERATION_CSV: &str = include_str!("../fixtures/moderation_630.csv");

// ---------------------------------------------------------------------------
// Protocol corpus

pub const PROTOCOL_CASES: &str = include_str!("../fixtures/protocol_cases.txt");

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Ok(usize),
    MissingHeader,
    Protocol,
    MalformedBlock(usize, Field),
    MalformedBox(usize),
    BoxRange(usize),
}

impl Expect {
    pub fn matches(&self, got: &Result<DetectionSet, ProtocolError>) -> bool {
        match (self, got) {
            (Expect::Ok(n), Ok(set)) => set.count() == *n && set.detections().len() == *n,
            (Expect::MissingHeader, Err(ProtocolError::MissingHeader)) => true,
            (Expect::Protocol, Err(ProtocolError::Protocol(_))) => true,
            (Expect::MalformedBlock(i, f), Err(ProtocolError::MalformedBlock { index, field })) => {
                i == index && f == field
            }
            (Expect::MalformedBox(i), Err(ProtocolError::MalformedBox { index })) => i == index,
            (Expect::BoxRange(i), Err(ProtocolError::BoxRange { index })) => i == index,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolCase {
    pub name: String,
    pub raw: String,
    pub expect: Expect,
}

fn parse_field(s: &str) -> Field {
    match s {
        "concept" => Field::Concept,
        "source_prompt" => Field::SourcePrompt,
        "target_prompt" => Field::TargetPrompt,
        "blend_words" => Field::BlendWords,
        "bounding_box" => Field::BoundingBox,
        other => panic!("unknown field `{other}` in corpus"),
    }
}

fn parse_expect(s: &str) -> Expect {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let idx = |i: usize| parts[i].parse::<usize>().expect("index");
    match parts[0] {
        "ok" => Expect::Ok(idx(1)),
        "missing_header" => Expect::MissingHeader,
        "protocol" => Expect::Protocol,
        "malformed_block" => Expect::MalformedBlock(idx(1), parse_field(parts[2])),
        "malformed_box" => Expect::MalformedBox(idx(1)),
        "box_range" => Expect::BoxRange(idx(1)),
        other => panic!("unknown expectation `{other}`"),
    }
}

/// Splits the corpus file into cases. Directives start with `### `; the
/// remaining lines up to the next `### case:` form the raw response.
pub fn protocol_cases() -> Vec<ProtocolCase> {
    let mut out = Vec::new();
    let mut cur: Option<(String, Option<Expect>, Vec<String>, Vec<&str>)> = None;
    let finish = |c: (String, Option<Expect>, Vec<String>, Vec<&str>),
                  out: &mut Vec<ProtocolCase>| {
        let (name, expect, transforms, lines) = c;
        let mut lines: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        let mut sep = "\n";
        for t in &transforms {
            match t.as_str() {
                "crlf" => sep = "\r\n",
                "trailing-spaces" => lines.iter_mut().for_each(|l| l.push_str("  \t")),
                other => panic!("unknown transform `{other}`"),
            }
        }
        let mut raw = lines.join(sep);
        if !lines.is_empty() {
            raw.push_str(sep);
        }
        out.push(ProtocolCase {
            name,
            raw,
            expect: expect.expect("every case has an expectation"),
        });
    };
    for line in PROTOCOL_CASES.lines() {
        if let Some(name) = line.strip_prefix("### case: ") {
            if let Some(c) = cur.take() {
                finish(c, &mut out);
            }
            cur = Some((name.trim().to_string(), None, Vec::new(), Vec::new()));
        } else if let Some(e) = line.strip_prefix("### expect: ") {
            cur.as_mut().expect("case header first").1 = Some(parse_expect(e));
        } else if let Some(t) = line.strip_prefix("### transform: ") {
            cur.as_mut()
                .expect("case header first")
                .2
                .push(t.trim().to_string());
        } else {
            cur.as_mut().expect("case header first").3.push(line);
        }
    }
    if let Some(c) = cur.take() {
        finish(c, &mut out);
    }
    out
}
