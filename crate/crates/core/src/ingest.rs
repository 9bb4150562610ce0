//! Particle export files and synthetic casework.
//!
//! The file dialect is comma-separated UTF-8 with a mandatory header holding at
//! least `sample_id`, `class`, `area_um2` and `pixel_area_um2`. Other columns
//! are ignored, as are lines starting with `#`. Only rows of class
//! `characteristic` feed the dataset.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fns::CountDistribution;
use crate::grid::{register_dimensionless, GridSpec};
use crate::inference::{same_pixel_area, ObservedDataset, ObservedRecord};
use crate::io::{fmt_f64, Metadata};
use crate::rng::{stream_rng, STREAM_SYNTHETIC};
use crate::sizedist::{draw_area, LogTParams, TSampler};

pub const CHARACTERISTIC: &str = "characteristic";
const REQUIRED: [&str; 4] = ["sample_id", "class", "area_um2", "pixel_area_um2"];

/// Areas further than this fraction of a pixel from the lattice are flagged.
const LATTICE_TOL: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Keep records whose pixel areas differ instead of rejecting the file.
    pub allow_mixed_pixel_areas: bool,
    /// Fail on the first bad row instead of reporting it.
    pub strict: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadRow {
    /// 1-based line number in the file.
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_in: u64,
    pub rows_parsed: u64,
    pub rows_bad: u64,
    pub bad_rows: Vec<BadRow>,
    /// Parsed rows of another class.
    pub rows_other_class: u64,
    /// Characteristic areas more than 1% of a pixel off the lattice.
    pub rows_off_lattice: u64,
    /// Distinct sample ids among parsed rows.
    pub samples: u64,
    /// Samples with at least one characteristic particle.
    pub positive_samples: u64,
    /// Characteristic particles.
    pub particles: u64,
}

impl IngestReport {
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "rows_in = {}", self.rows_in)?;
        writeln!(w, "rows_parsed = {}", self.rows_parsed)?;
        writeln!(w, "rows_bad = {}", self.rows_bad)?;
        writeln!(w, "rows_other_class = {}", self.rows_other_class)?;
        writeln!(w, "rows_off_lattice = {}", self.rows_off_lattice)?;
        writeln!(w, "samples = {}", self.samples)?;
        writeln!(w, "positive_samples = {}", self.positive_samples)?;
        writeln!(w, "particles = {}", self.particles)?;
        for b in &self.bad_rows {
            writeln!(w, "bad_row = line {}: {}", b.line, b.reason)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LoadedData {
    pub dataset: ObservedDataset,
    /// Per-sample count distribution over positive samples.
    pub counts: CountDistribution,
    /// Characteristic particles per positive sample.
    pub sample_counts: BTreeMap<String, u32>,
    pub report: IngestReport,
}

pub fn load(path: &Path, options: LoadOptions) -> Result<LoadedData> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_from_reader(file, path, options)
}

/// Parses an export from any reader; `path` only labels errors.
pub fn load_from_reader<R: Read>(reader: R, path: &Path, options: LoadOptions) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| column(c).is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::format(
            path,
            format!("missing required column(s): {}", missing.join(", ")),
        ));
    }
    let [i_id, i_class, i_area, i_px] = REQUIRED.map(|c| column(c).expect("checked"));

    let mut report = IngestReport::default();
    let mut records = Vec::new();
    let mut all_samples = BTreeMap::<String, u32>::new();

    for row in rdr.records() {
        report.rows_in += 1;
        let (line, parsed) = match row {
            Ok(r) => (
                r.position().map_or(0, |p| p.line()),
                parse_row(&r, [i_id, i_class, i_area, i_px]),
            ),
            Err(e) => (e.position().map_or(0, |p| p.line()), Err(e.to_string())),
        };
        match parsed {
            Ok((id, class, area, px)) => {
                report.rows_parsed += 1;
                let n = all_samples.entry(id.clone()).or_insert(0);
                if class != CHARACTERISTIC {
                    report.rows_other_class += 1;
                    continue;
                }
                *n += 1;
                let b = (area / px).round();
                if (area / px - b).abs() > LATTICE_TOL {
                    report.rows_off_lattice += 1;
                }
                records.push(ObservedRecord {
                    sample_id: id,
                    b_area: area,
                    pixel_area: px,
                });
            }
            Err(reason) => {
                if options.strict {
                    return Err(Error::format(path, format!("line {line}: {reason}")));
                }
                report.rows_bad += 1;
                report.bad_rows.push(BadRow { line, reason });
            }
        }
    }

    if records.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no characteristic particles",
            path.display()
        )));
    }
    if !options.allow_mixed_pixel_areas {
        let px0 = records[0].pixel_area;
        if let Some(r) = records.iter().find(|r| !same_pixel_area(r.pixel_area, px0)) {
            return Err(Error::Validation(format!(
                "mixed pixel areas ({px0} and {} um^2); pass the mixed-pixel option to accept",
                r.pixel_area
            )));
        }
    }
    let dataset = ObservedDataset::new(records)?;
    let sample_counts: BTreeMap<String, u32> =
        all_samples.iter().filter(|(_, n)| **n > 0).map(|(k, n)| (k.clone(), *n)).collect();
    report.samples = all_samples.len() as u64;
    report.positive_samples = sample_counts.len() as u64;
    report.particles = dataset.len() as u64;
    let counts = CountDistribution::from_sample_counts(&sample_counts.values().copied().collect::<Vec<_>>())?;
    Ok(LoadedData {
        dataset,
        counts,
        sample_counts,
        report,
    })
}

fn parse_row(r: &csv::StringRecord, idx: [usize; 4]) -> std::result::Result<(String, String, f64, f64), String> {
    let field = |k: usize, name: &str| {
        r.get(k)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing {name}"))
    };
    let id = field(idx[0], "sample_id")?.to_owned();
    let class = field(idx[1], "class")?.to_owned();
    let number = |k: usize, name: &str| -> std::result::Result<f64, String> {
        let s = field(k, name)?;
        let v: f64 = s.parse().map_err(|_| format!("{name} {s:?} is not a number"))?;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(format!("{name} {s:?} must be positive"))
        }
    };
    let area = number(idx[2], "area_um2")?;
    let px = number(idx[3], "pixel_area_um2")?;
    if class == CHARACTERISTIC && (area / px).round() < 1.0 {
        return Err(format!("area {area} is below one pixel of {px}"));
    }
    Ok((id, class, area, px))
}

/// One simulated particle.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParticle {
    pub sample_id: String,
    pub true_area: f64,
    pub b_pixels: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bookkeeping {
    pub samples: u64,
    /// Samples with at least one registered particle.
    pub positive_samples: u64,
    /// Samples whose every particle registered `B = 0`.
    pub dropped_samples: u64,
    pub particles: u64,
    pub detected_particles: u64,
    pub dropped_particles: u64,
}

/// Simulated casework: every particle with its true area and registration.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub pixel_area: f64,
    pub particles: Vec<SyntheticParticle>,
    pub bookkeeping: Bookkeeping,
}

impl SyntheticDataset {
    pub fn detected(&self) -> impl Iterator<Item = &SyntheticParticle> {
        self.particles.iter().filter(|p| p.b_pixels >= 1)
    }

    /// Registered counts of detected particles.
    pub fn detected_b_pixels(&self) -> Vec<u64> {
        self.detected().map(|p| p.b_pixels).collect()
    }

    /// Particle export holding the detected particles only.
    pub fn write_records<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        meta.write_to(w)?;
        writeln!(w, "sample_id,class,area_um2,pixel_area_um2")?;
        for p in self.detected() {
            writeln!(
                w,
                "{},{CHARACTERISTIC},{},{}",
                p.sample_id,
                fmt_f64(p.b_pixels as f64 * self.pixel_area),
                fmt_f64(self.pixel_area)
            )?;
        }
        Ok(())
    }

    /// Ground truth for every particle, detected or not.
    pub fn write_sidecar<W: Write>(&self, w: &mut W, meta: &Metadata) -> io::Result<()> {
        let b = &self.bookkeeping;
        let mut meta = meta.clone();
        meta.push("samples", b.samples)
            .push("positive_samples", b.positive_samples)
            .push("dropped_samples", b.dropped_samples)
            .push("particles", b.particles)
            .push("detected_particles", b.detected_particles)
            .push("dropped_particles", b.dropped_particles);
        meta.write_to(w)?;
        writeln!(w, "sample_id,true_area_um2,registered_b_pixels")?;
        for p in &self.particles {
            writeln!(w, "{},{},{}", p.sample_id, fmt_f64(p.true_area), p.b_pixels)?;
        }
        Ok(())
    }
}

fn register_random<R: Rng>(area: f64, px: f64, rng: &mut R) -> Result<u64> {
    let (fu, fv): (f64, f64) = (rng.random(), rng.random());
    register_dimensionless(area / px, fu, fv)
}

/// Simulates `n_samples` samples: particle count from `counts`, areas from the
/// log-t, one uniformly random grid offset per particle.
pub fn generate_synthetic(
    params: &LogTParams,
    counts: &CountDistribution,
    n_samples: usize,
    px: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    GridSpec::new(px)?;
    let mut rng = stream_rng(seed, STREAM_SYNTHETIC);
    let sampler = TSampler::new(params.nu)?;
    let (support, weights): (Vec<u32>, Vec<f64>) = counts.pmf().iter().map(|(n, p)| (*n, *p)).unzip();
    let pick = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
    let width = n_samples.to_string().len().max(6);

    let mut particles = Vec::new();
    let mut book = Bookkeeping {
        samples: n_samples as u64,
        ..Bookkeeping::default()
    };
    for s in 0..n_samples {
        let id = format!("S{:0width$}", s + 1);
        let n = support[pick.sample(&mut rng)];
        let mut detected = 0;
        for _ in 0..n {
            let a = draw_area(params, &sampler, &mut rng);
            let b = register_random(a, px, &mut rng)?;
            detected += (b > 0) as u64;
            particles.push(SyntheticParticle {
                sample_id: id.clone(),
                true_area: a,
                b_pixels: b,
            });
        }
        book.particles += n as u64;
        book.detected_particles += detected;
        if detected > 0 {
            book.positive_samples += 1;
        } else {
            book.dropped_samples += 1;
        }
    }
    book.dropped_particles = book.particles - book.detected_particles;
    Ok(SyntheticDataset {
        pixel_area: px,
        particles,
        bookkeeping: book,
    })
}

/// Simulates particles one at a time until `n_detected` register `B >= 1`;
/// each particle is its own sample.
pub fn generate_detected(
    params: &LogTParams,
    px: f64,
    n_detected: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    GridSpec::new(px)?;
    let mut rng = stream_rng(seed, STREAM_SYNTHETIC);
    let sampler = TSampler::new(params.nu)?;
    let mut particles = Vec::new();
    let mut detected = 0usize;
    // fail rather than spin when detection is practically impossible
    let limit = 1000 * n_detected.max(1000);
    while detected < n_detected {
        if particles.len() >= limit {
            return Err(Error::invalid(format!(
                "only {detected} of {} simulated particles registered; parameters sit below the pixel scale",
                particles.len()
            )));
        }
        let a = draw_area(params, &sampler, &mut rng);
        let b = register_random(a, px, &mut rng)?;
        detected += (b > 0) as usize;
        particles.push(SyntheticParticle {
            sample_id: format!("P{:07}", particles.len() + 1),
            true_area: a,
            b_pixels: b,
        });
    }
    let n = particles.len() as u64;
    Ok(SyntheticDataset {
        pixel_area: px,
        particles,
        bookkeeping: Bookkeeping {
            samples: n,
            positive_samples: detected as u64,
            dropped_samples: n - detected as u64,
            particles: n,
            detected_particles: detected as u64,
            dropped_particles: n - detected as u64,
        },
    })
}
