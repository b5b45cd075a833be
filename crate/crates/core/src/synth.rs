//! Planted synthetic data: rendered clothing images with known attributes,
//! and label-level corpora with known year-over-year shifts.
//!
//! Images are 100×200 figures laid out on the default part grid, so the
//! fallback segmentation finds every garment where it was painted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::Raster;
use crate::ingest::{write_manifest, Corpus, ImageRecord, Rect, Segmentation, Source};
use crate::schema::{load_schema, AttributeSchema, CategoryGroup};

pub const IMAGE_WIDTH: u32 = 100;
pub const IMAGE_HEIGHT: u32 = 200;

const SCHEMA_TEXT: &str = "\
# synthetic attribute schema
version = synthetic-8-v1
id=red_upper; name=Red (upper body); category=color_upper; classic=false
id=blue_lower; name=Blue (lower body); category=color_lower; classic=false
id=striped_upper; name=Striped (upper body); category=pattern_upper; classic=false
id=spotted_lower; name=Spotted (lower body); category=pattern_lower; classic=false
id=skirt; name=Skirt; category=style; classic=true
id=tank_top; name=Tank top; category=style; classic=false
id=belt; name=Belt; category=style; classic=false
id=accessories; name=Accessories; category=style; classic=false
";

/// Attribute positions in the synthetic schema.
pub mod attr {
    pub const RED_UPPER: usize = 0;
    pub const BLUE_LOWER: usize = 1;
    pub const STRIPED_UPPER: usize = 2;
    pub const SPOTTED_LOWER: usize = 3;
    pub const SKIRT: usize = 4;
    pub const TANK_TOP: usize = 5;
    pub const BELT: usize = 6;
    pub const ACCESSORIES: usize = 7;
    pub const COUNT: usize = 8;
}

/// Probability that accessories disagree with the belt.
pub const ACCESSORY_FLIP: f64 = 0.05;
/// Probability that present accessories are actually visible.
pub const ACCESSORY_VISIBLE: f64 = 0.5;

pub fn synthetic_schema() -> AttributeSchema {
    load_schema(SCHEMA_TEXT).expect("bundled synthetic schema is valid")
}

const SKIN: [u8; 3] = [224, 172, 140];
const RED: [u8; 3] = [205, 35, 35];
const BLUE: [u8; 3] = [35, 60, 190];
const BELT: [u8; 3] = [25, 20, 15];
const YELLOW: [u8; 3] = [235, 215, 30];
const DOT: [u8; 3] = [240, 240, 240];
const TOP_PALETTE: [[u8; 3]; 4] = [[40, 140, 60], [128, 128, 128], [120, 80, 40], [120, 50, 150]];
const BOTTOM_PALETTE: [[u8; 3]; 4] = [[30, 30, 30], [128, 128, 128], [120, 80, 40], [40, 120, 50]];

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amount: i32) -> [u8; 3] {
    c.map(|v| (i32::from(v) + rng.gen_range(-amount..=amount)).clamp(0, 255) as u8)
}

fn shade(c: [u8; 3], f: f64) -> [u8; 3] {
    c.map(|v| (f64::from(v) * f).round() as u8)
}

/// Samples one attribute vector. Base attributes are independent Bernoulli
/// draws at `rates`; accessories copy the belt except for rare flips.
pub fn sample_attributes(rng: &mut ChaCha8Rng, rates: &[f64; attr::COUNT]) -> Vec<bool> {
    let mut a: Vec<bool> = rates.iter().map(|&p| rng.gen_bool(p)).collect();
    a[attr::ACCESSORIES] = a[attr::BELT] ^ rng.gen_bool(ACCESSORY_FLIP);
    a
}

/// Paints a figure showing the given attributes. Present accessories are
/// drawn only some of the time, so they are not fully observable.
pub fn render(attrs: &[bool], rng: &mut ChaCha8Rng) -> Result<Raster> {
    if attrs.len() != attr::COUNT {
        return Err(Error::DimensionMismatch {
            expected: attr::COUNT,
            found: attrs.len(),
        });
    }
    let bg = jitter(rng, [70, 80, 95], 15);
    let mut img = Raster::filled(IMAGE_WIDTH, IMAGE_HEIGHT, bg)?;
    let skin = jitter(rng, SKIN, 6);

    let top = if attrs[attr::RED_UPPER] {
        jitter(rng, RED, 15)
    } else {
        let base = *TOP_PALETTE.choose(rng).expect("palette is not empty");
        jitter(rng, base, 15)
    };
    let bottom = if attrs[attr::BLUE_LOWER] {
        jitter(rng, BLUE, 15)
    } else {
        let base = *BOTTOM_PALETTE.choose(rng).expect("palette is not empty");
        jitter(rng, base, 15)
    };

    // head
    img.fill_rect(Rect::new(38, 2, 24, 18), skin);

    // torso, with horizontal stripes of a darker shade
    img.fill_rect(Rect::new(30, 20, 40, 80), top);
    if attrs[attr::STRIPED_UPPER] {
        let dark = shade(top, 0.4);
        for band in (24..100).step_by(8) {
            img.fill_rect(Rect::new(30, band, 40, 4), dark);
        }
    }
    if attrs[attr::BELT] {
        img.fill_rect(Rect::new(30, 92, 40, 8), jitter(rng, BELT, 8));
    }

    // arms: bare for tank tops, sleeves otherwise
    let arm = if attrs[attr::TANK_TOP] { skin } else { top };
    for x in [0, 70] {
        img.fill_rect(Rect::new(x, 20, 30, 80), arm);
    }
    if attrs[attr::ACCESSORIES] && rng.gen_bool(ACCESSORY_VISIBLE) {
        for x in [11, 81] {
            img.fill_rect(Rect::new(x, 72, 8, 8), YELLOW);
        }
    }

    // legs: a skirt covers the upper legs and leaves the lower legs bare
    img.fill_rect(Rect::new(30, 100, 40, 50), bottom);
    let lower = if attrs[attr::SKIRT] { skin } else { bottom };
    img.fill_rect(Rect::new(30, 150, 40, 50), lower);
    if attrs[attr::SPOTTED_LOWER] {
        for y in (104..148).step_by(8) {
            for x in (33..68).step_by(8) {
                img.fill_rect(Rect::new(x, y, 3, 3), DOT);
            }
        }
    }

    // sensor noise
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let p = img.pixel(x, y);
            img.set_pixel(x, y, jitter(rng, p, 6));
        }
    }
    Ok(img)
}

/// One tagged group of synthetic images.
#[derive(Debug, Clone, PartialEq)]
pub struct TagPlan {
    pub source: Source,
    pub year: i32,
    pub images: usize,
    /// Presence rates in schema order; the accessories entry is unused
    /// because accessories follow the belt.
    pub rates: [f64; attr::COUNT],
}

pub const BASE_RATES: [f64; attr::COUNT] = [0.4, 0.4, 0.4, 0.4, 0.4, 0.4, 0.5, 0.5];

/// A single street-chic 2014 group at the base rates.
pub fn single_tag_plan(images: usize) -> Vec<TagPlan> {
    vec![TagPlan {
        source: Source::StreetChic,
        year: 2014,
        images,
        rates: BASE_RATES,
    }]
}

/// Four groups (show/street × 2014/2015). Between years, pattern shifts
/// agree in sign across the two sources, style shifts (tank top, belt and
/// with it accessories) disagree, and color shifts agree.
pub fn trend_plan(images_per_tag: usize) -> Vec<TagPlan> {
    let shifted = |shifts: [(usize, f64); 5]| {
        let mut r = BASE_RATES;
        for (i, d) in shifts {
            r[i] += d;
        }
        r
    };
    let mut show15 = shifted([
        (attr::RED_UPPER, 0.2),
        (attr::BLUE_LOWER, -0.1),
        (attr::STRIPED_UPPER, 0.2),
        (attr::SPOTTED_LOWER, -0.15),
        (attr::TANK_TOP, 0.3),
    ]);
    show15[attr::BELT] -= 0.3;
    let mut street15 = shifted([
        (attr::RED_UPPER, 0.15),
        (attr::BLUE_LOWER, -0.15),
        (attr::STRIPED_UPPER, 0.15),
        (attr::SPOTTED_LOWER, -0.2),
        (attr::TANK_TOP, -0.3),
    ]);
    street15[attr::BELT] += 0.3;
    let tag = |source, year, rates| TagPlan {
        source,
        year,
        images: images_per_tag,
        rates,
    };
    vec![
        tag(Source::FashionShow, 2014, BASE_RATES),
        tag(Source::FashionShow, 2015, show15),
        tag(Source::StreetChic, 2014, BASE_RATES),
        tag(Source::StreetChic, 2015, street15),
    ]
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub schema_path: PathBuf,
    pub schema: AttributeSchema,
    pub corpus: Corpus,
}

/// Renders every planned image into `dir/images`, and writes
/// `dir/manifest.jsonl` (with labels) and `dir/schema.txt`.
pub fn generate_corpus(dir: &Path, plans: &[TagPlan], seed: u64) -> Result<SyntheticCorpus> {
    let schema = synthetic_schema();
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for plan in plans {
        if plan.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidParameter(format!(
                "rates for {}/{} must lie in [0, 1]",
                plan.source, plan.year
            )));
        }
        for k in 0..plan.images {
            let id = format!("{}_{}_{k:04}", plan.source, plan.year);
            let attrs = sample_attributes(&mut rng, &plan.rates);
            let img = render(&attrs, &mut rng)?;
            let path = image_dir.join(format!("{id}.png"));
            img.save_png(&path)?;
            let labels: BTreeMap<String, bool> = schema.ids().map(String::from).zip(attrs).collect();
            records.push(ImageRecord {
                id,
                path,
                source: plan.source,
                year: plan.year,
                month: None,
                size: Some((IMAGE_WIDTH, IMAGE_HEIGHT)),
                segmentation: Segmentation::Fallback,
                labels: Some(labels),
            });
        }
    }
    let corpus = Corpus::new(records, &schema)?;
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, write_manifest(&corpus, dir)?).map_err(|e| Error::io(&manifest, e))?;
    let schema_path = dir.join("schema.txt");
    std::fs::write(&schema_path, schema.serialize()).map_err(|e| Error::io(&schema_path, e))?;
    Ok(SyntheticCorpus {
        dir: dir.to_path_buf(),
        manifest,
        schema_path,
        schema,
        corpus,
    })
}

/// Removes the label of `attribute` from the listed images with probability
/// `drop`, leaving every other label in place. Models a sparsely annotated
/// attribute: its own classifier sees few examples while its co-occurrence
/// with better-annotated attributes is still estimable.
pub fn sparse_annotation(corpus: &Corpus, attribute: &str, ids: &[String], drop: f64, seed: u64) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&drop) {
        return Err(Error::InvalidParameter(format!("drop probability must lie in [0, 1], got {drop}")));
    }
    let chosen: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.clone();
    for r in out.records.iter_mut().filter(|r| chosen.contains(r.id.as_str())) {
        if rng.gen::<f64>() < drop {
            if let Some(labels) = r.labels.as_mut() {
                labels.remove(attribute);
            }
        }
    }
    Ok(out)
}

/// Per-attribute rates for the four groups of a label-level trend corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendPlan {
    pub base: Vec<f64>,
    pub show_shift: Vec<f64>,
    pub street_shift: Vec<f64>,
}

/// Shifts for any schema: pattern attributes move the same way in both
/// sources, style attributes move in opposite directions, color attributes
/// independently. `striped_upper` and `plaid_upper`, when present, get fixed
/// show shifts of +0.2 and −0.15.
pub fn plan_trend(schema: &AttributeSchema, seed: u64) -> TrendPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = schema.len();
    let mut plan = TrendPlan {
        base: vec![0.0; n],
        show_shift: vec![0.0; n],
        street_shift: vec![0.0; n],
    };
    for (i, a) in schema.attributes().iter().enumerate() {
        plan.base[i] = rng.gen_range(0.3..0.5);
        let mut show = rng.gen_range(0.05..0.25) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        match a.id.as_str() {
            "striped_upper" => show = 0.2,
            "plaid_upper" => show = -0.15,
            _ => {}
        }
        let street = match a.category.group() {
            CategoryGroup::Pattern => show * rng.gen_range(0.7..1.0),
            CategoryGroup::Style => -show * rng.gen_range(0.7..1.0),
            CategoryGroup::Color => rng.gen_range(-0.2..0.2),
        };
        plan.show_shift[i] = show;
        plan.street_shift[i] = street;
    }
    plan
}

/// Label-level decisions for the four groups (show 2014, show 2015,
/// street 2014, street 2015), `images` per group, drawn independently per
/// attribute at the planned rates.
pub fn plant_trend_decisions(plan: &TrendPlan, images: usize, seed: u64) -> [Vec<Vec<bool>>; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rates = |shift: Option<&Vec<f64>>| -> Vec<f64> {
        plan.base
            .iter()
            .enumerate()
            .map(|(i, b)| (b + shift.map_or(0.0, |s| s[i])).clamp(0.0, 1.0))
            .collect()
    };
    let groups = [
        rates(None),
        rates(Some(&plan.show_shift)),
        rates(None),
        rates(Some(&plan.street_shift)),
    ];
    groups.map(|r| {
        (0..images)
            .map(|_| r.iter().map(|&p| rng.gen_bool(p)).collect())
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_color, hsv_bin};
    use crate::ingest::{default_part_regions, BodyPart};

    #[test]
    fn schema_has_eight_attributes() {
        let s = synthetic_schema();
        assert_eq!(s.len(), attr::COUNT);
        assert_eq!(s.index_of("accessories"), Some(attr::ACCESSORIES));
        assert_eq!(s.index_of("belt"), Some(attr::BELT));
        assert!(s.get("skirt").unwrap().classic);
    }

    #[test]
    fn red_torso_lands_in_red_bins() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = vec![false; attr::COUNT];
        a[attr::RED_UPPER] = true;
        let img = render(&a, &mut rng).unwrap();
        let torso = default_part_regions(IMAGE_WIDTH, IMAGE_HEIGHT).unwrap()[0];
        assert_eq!(torso.part, BodyPart::Torso);
        let h = extract_color(&img, &torso).unwrap();
        let red = hsv_bin(RED);
        assert!(h.mean_pool[red] > 0.5, "{}", h.mean_pool[red]);
    }

    #[test]
    fn rendering_is_seeded() {
        let a = sample_attributes(&mut ChaCha8Rng::seed_from_u64(3), &BASE_RATES);
        let x = render(&a, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let y = render(&a, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(x, y);
        assert!(render(&a[..3], &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn accessories_follow_belt() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agree = (0..2000)
            .filter(|_| {
                let a = sample_attributes(&mut rng, &BASE_RATES);
                a[attr::BELT] == a[attr::ACCESSORIES]
            })
            .count();
        assert!((1850..=1950).contains(&agree), "{agree}");
    }

    #[test]
    fn trend_plan_signs() {
        let plan = trend_plan(10);
        let d = |p: &TagPlan, q: &TagPlan, i: usize| q.rates[i] - p.rates[i];
        assert!(d(&plan[0], &plan[1], attr::STRIPED_UPPER) > 0.0 && d(&plan[2], &plan[3], attr::STRIPED_UPPER) > 0.0);
        assert!(d(&plan[0], &plan[1], attr::TANK_TOP) * d(&plan[2], &plan[3], attr::TANK_TOP) < 0.0);
    }
}
