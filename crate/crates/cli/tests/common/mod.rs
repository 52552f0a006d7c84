//! Synthetic corpus shared by the CLI integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use safe_edit_core::client::{AuditExchange, FixtureStore};
use safe_edit_core::protocol::{
    Category, ConceptDetection, DetectionSet, DetectorBox, PolicyPrompt,
};

pub const SIZE: u32 = 64;
pub const GUN: [u8; 3] = [200, 30, 30];
pub const CIGARETTE: [u8; 3] = [240, 240, 40];
pub const SKIN: [u8; 3] = [30, 60, 220];
pub const NOTHING: [u8; 3] = [128, 128, 128];

/// Recording time pinned so fixtures are reproducible.
pub const RECORDED_AT: &str = "2025-01-01T00:00:00Z";

pub fn background() -> RgbImage {
    RgbImage::from_fn(SIZE, SIZE, |x, y| {
        let n = ((x * 7 + y * 13) % 17) as u8;
        Rgb([120 + n, 124 + n / 2, 118 + n])
    })
}

/// Paints `[x0, x1) x [y0, y1)` pixels.
pub fn paint(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: [u8; 3]) {
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

/// Normalized box from pixel bounds on the 64 px canvas (multiples of 8 px
/// map to integer wire coordinates).
pub fn wire_box(x0: u32, y0: u32, x1: u32, y1: u32) -> DetectorBox {
    let n = |p: u32| p * 1000 / SIZE;
    DetectorBox::new(n(y0), n(x0), n(y1), n(x1)).expect("valid box")
}

pub fn detection(
    label: &str,
    src: &str,
    tgt: &str,
    words: [&str; 2],
    b: DetectorBox,
) -> ConceptDetection {
    ConceptDetection {
        label: label.into(),
        source_prompt: format!("image of a {src}"),
        target_prompt: format!("image of a {tgt}"),
        blend_words: words.iter().map(|w| w.to_string()).collect(),
        bbox: b,
    }
}

pub struct Case {
    pub name: &'static str,
    pub image: RgbImage,
    pub detections: DetectionSet,
}

/// Five scenes: clean, one weapon, two same-colored weapons with only the
/// first detected, two distinct concepts, one nudity stand-in.
pub fn corpus() -> Vec<Case> {
    let clean = background();

    let mut single = background();
    paint(&mut single, 16, 16, 32, 32, GUN);

    let mut twin = background();
    paint(&mut twin, 8, 16, 24, 32, GUN);
    paint(&mut twin, 40, 16, 56, 32, GUN);

    let mut pair = background();
    paint(&mut pair, 8, 8, 24, 24, GUN);
    paint(&mut pair, 40, 40, 56, 56, CIGARETTE);

    let mut body = background();
    paint(&mut body, 24, 16, 40, 48, SKIN);

    let gun = |b| {
        detection(
            "Weapon",
            "person holding a gun",
            "person holding nothing",
            ["gun", "nothing"],
            b,
        )
    };
    vec![
        Case {
            name: "clean",
            image: clean,
            detections: DetectionSet::new(vec![]),
        },
        Case {
            name: "single",
            image: single,
            detections: DetectionSet::new(vec![gun(wire_box(8, 8, 40, 40))]),
        },
        Case {
            name: "twin",
            image: twin,
            detections: DetectionSet::new(vec![gun(wire_box(0, 8, 32, 40))]),
        },
        Case {
            name: "pair",
            image: pair,
            detections: DetectionSet::new(vec![
                gun(wire_box(0, 0, 32, 32)),
                detection(
                    "Smoking",
                    "person with cigarette in mouth",
                    "person with nothing in mouth",
                    ["cigarette", "nothing"],
                    wire_box(32, 32, 64, 64),
                ),
            ]),
        },
        Case {
            name: "body",
            image: body,
            detections: DetectionSet::new(vec![detection(
                "Nudity",
                "naked woman",
                "clothed woman",
                ["naked", "clothed"],
                wire_box(16, 8, 48, 56),
            )]),
        },
    ]
}

pub const CONFIG: &str = r#"
tau = 0.5
workers = 2

[client]
mode = "replay"

[schedule]
total_steps = 10

[backend]
kind = "toy"
alpha = 0.3
word_colors = { gun = [200, 30, 30], cigarette = [240, 240, 40], naked = [30, 60, 220], nothing = [128, 128, 128], clothed = [90, 60, 30] }
"#;

pub struct Workspace {
    pub root: PathBuf,
    pub images: Vec<PathBuf>,
    pub fixtures: PathBuf,
    pub config: PathBuf,
}

/// Writes images, replay fixtures and the config under `root`.
pub fn materialize(root: &Path) -> Workspace {
    let images_dir = root.join("images");
    let fixtures = root.join("fixtures");
    std::fs::create_dir_all(&images_dir).unwrap();
    std::fs::create_dir_all(&fixtures).unwrap();
    let store = FixtureStore::open(&fixtures).unwrap();
    let prompt = PolicyPrompt::new(&Category::ALL).unwrap();
    let ts = chrono::DateTime::parse_from_rfc3339(RECORDED_AT)
        .unwrap()
        .to_utc();
    let mut images = Vec::new();
    for case in corpus() {
        let p = images_dir.join(format!("{}.png", case.name));
        case.image.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        store
            .record(&AuditExchange::new(
                &bytes,
                prompt.text(),
                case.detections.to_wire(),
                ts,
            ))
            .unwrap();
        images.push(p);
    }
    let config = root.join("pipeline.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Workspace {
        root: root.to_path_buf(),
        images,
        fixtures,
        config,
    }
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_safe-edit"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
