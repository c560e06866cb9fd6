use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::category::{CategorySpec, ParamRange, Template};
use super::instance::{sample_instance, Instance, Split};
use super::observe::{render_observation, ObservationRecord, ViewSettings};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, Pose, Quat, Vec3};
use crate::io::{ByteReader, ByteWriter};
use crate::seed::derive_seed;

const MAGIC: &[u8; 8] = b"CASSDATA";
pub const DATASET_VERSION: u32 = 1;

/// Generation settings; every field is recorded in the dataset header.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub categories: Vec<CategorySpec>,
    pub instances_per_category: usize,
    pub views_per_instance: usize,
    /// Canonical points per instance.
    pub points: usize,
    /// Points drawn per observation before culling.
    pub obs_points: usize,
    pub visibility: f64,
    pub noise_sigma: f64,
    /// Fraction of each category's instances held out.
    pub test_fraction: f64,
    /// Translation box in the camera frame, meters: `(lo, hi)` per axis.
    pub translation_lo: Vec3,
    pub translation_hi: Vec3,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            categories: ["bottle", "bowl", "mug"]
                .iter()
                .map(|n| CategorySpec::builtin(n).expect("builtin category"))
                .collect(),
            instances_per_category: 200,
            views_per_instance: 4,
            points: 128,
            obs_points: 96,
            visibility: 0.6,
            noise_sigma: 0.001,
            test_fraction: 0.2,
            translation_lo: [-0.15, -0.15, 0.5],
            translation_hi: [0.15, 0.15, 1.0],
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::invalid("no categories"));
        }
        for c in &self.categories {
            c.validate()?;
        }
        if self.instances_per_category == 0 || self.views_per_instance == 0 {
            return Err(Error::invalid("instance and view counts must be positive"));
        }
        if self.points < 8 {
            return Err(Error::invalid("need at least 8 points per instance"));
        }
        if self.obs_points > self.points {
            return Err(Error::invalid(format!(
                "observation points {} exceed instance points {}",
                self.obs_points, self.points
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::invalid("test fraction must lie in [0, 1)"));
        }
        if (0..3).any(|k| !(self.translation_lo[k] <= self.translation_hi[k])) {
            return Err(Error::invalid("translation box is empty"));
        }
        if self.translation_lo[2] <= 0.0 {
            return Err(Error::invalid("objects must lie in front of the camera (z > 0)"));
        }
        self.view().validate()
    }

    pub fn view(&self) -> ViewSettings {
        ViewSettings {
            points: self.obs_points,
            visibility: self.visibility,
            noise_sigma: self.noise_sigma,
        }
    }

    fn held_out(&self) -> usize {
        (self.test_fraction * self.instances_per_category as f64).ceil() as usize
    }

    fn provenance(&self) -> String {
        format!(
            "instances_per_category={} views_per_instance={} visibility={} noise={} \
             test_fraction={} translation_lo={:?} translation_hi={:?}",
            self.instances_per_category,
            self.views_per_instance,
            self.visibility,
            self.noise_sigma,
            self.test_fraction,
            self.translation_lo,
            self.translation_hi
        )
    }
}

/// Canonical instances plus posed observations of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub categories: Vec<CategorySpec>,
    pub points: usize,
    pub obs_points: usize,
    pub seed: u64,
    pub provenance: String,
    pub instances: Vec<Instance>,
    pub records: Vec<ObservationRecord>,
}

/// Uniform rotation and a translation uniform in the configured box.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, lo: Vec3, hi: Vec3) -> Result<Pose> {
    let q = Quat::random(rng);
    let t = [0, 1, 2].map(|k| if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] });
    Pose::new(q, t)
}

/// Generates the full dataset. Instances and views draw from streams
/// addressed by (category, instance, view), so the result does not depend
/// on thread scheduling. Points and colors are rounded to `f32`, the
/// on-disk precision.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let per = cfg.instances_per_category;
    let held_out = cfg.held_out();
    let jobs: Vec<(usize, usize)> = (0..cfg.categories.len())
        .flat_map(|c| (0..per).map(move |i| (c, i)))
        .collect();
    let built: Vec<(Instance, Vec<ObservationRecord>)> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let id = c * per + i;
            let cat = &cfg.categories[c];
            let mut inst =
                sample_instance(cat, cfg.points, derive_seed(cfg.seed, &[0, c as u64, i as u64]))?
                    .quantized();
            inst.split = if i >= per - held_out { Split::Test } else { Split::Train };
            let views = (0..cfg.views_per_instance)
                .map(|v| {
                    let s = derive_seed(cfg.seed, &[1, c as u64, i as u64, v as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    let pose = sample_pose(&mut rng, cfg.translation_lo, cfg.translation_hi)?;
                    let mut rec = render_observation(&inst, id, pose, cfg.view(), rng.random())?;
                    rec.observed = rec.observed.quantize_f32();
                    Ok(rec)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((inst, views))
        })
        .collect::<Result<_>>()?;
    let mut instances = Vec::with_capacity(built.len());
    let mut records = Vec::with_capacity(built.len() * cfg.views_per_instance);
    for (inst, views) in built {
        instances.push(inst);
        records.extend(views);
    }
    Ok(Dataset {
        categories: cfg.categories.clone(),
        points: cfg.points,
        obs_points: cfg.obs_points,
        seed: cfg.seed,
        provenance: cfg.provenance(),
        instances,
        records,
    })
}

impl Dataset {
    pub fn category(&self, name: &str) -> Result<&CategorySpec> {
        self.categories
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown category `{name}`")))
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown category `{name}`")))
    }

    pub fn instance_of(&self, record: &ObservationRecord) -> &Instance {
        &self.instances[record.instance]
    }

    /// Indices of records whose instance is in `split`.
    pub fn record_indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.instance_of(&self.records[i]).split == split)
            .collect()
    }

    pub fn instance_indices(&self, split: Split) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&i| self.instances[i].split == split)
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_consistent()?;
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(DATASET_VERSION);
        w.u64(self.points as u64);
        w.u64(self.obs_points as u64);
        w.u64(self.seed);
        w.str(&self.provenance);
        w.u32(self.categories.len() as u32);
        for c in &self.categories {
            w.str(&c.name);
            w.u8(c.template.code());
            w.u32(c.ranges.len() as u32);
            for r in &c.ranges {
                w.str(&r.name);
                w.f64(r.lo);
                w.f64(r.hi);
            }
            match c.symmetry_axis {
                Some(a) => {
                    w.u8(1);
                    a.iter().for_each(|&v| w.f64(v));
                }
                None => w.u8(0),
            }
        }
        w.u64(self.instances.len() as u64);
        for inst in &self.instances {
            w.u32(self.category_index(&inst.category)? as u32);
            w.u8(matches!(inst.split, Split::Test) as u8);
            w.u32(inst.shape_params.len() as u32);
            inst.shape_params.iter().for_each(|&v| w.f64(v));
            write_cloud(&mut w, &inst.canonical);
        }
        w.u64(self.records.len() as u64);
        for rec in &self.records {
            w.u64(rec.instance as u64);
            rec.pose.to_array().iter().for_each(|&v| w.f64(v));
            write_cloud(&mut w, &rec.observed);
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc(bytes)?;
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        r.verify_crc()?;
        let points = r.u64()? as usize;
        let obs_points = r.u64()? as usize;
        let seed = r.u64()?;
        let provenance = r.string()?;
        let ncat = r.u32()? as usize;
        let mut categories = Vec::with_capacity(ncat.min(64));
        for _ in 0..ncat {
            let name = r.string()?;
            let template = Template::from_code(r.u8()?)?;
            let nr = r.u32()? as usize;
            let mut ranges = Vec::with_capacity(nr.min(64));
            for _ in 0..nr {
                let rname = r.string()?;
                ranges.push(ParamRange {
                    name: rname,
                    lo: r.f64()?,
                    hi: r.f64()?,
                });
            }
            let symmetry_axis = match r.u8()? {
                0 => None,
                1 => Some([r.f64()?, r.f64()?, r.f64()?]),
                f => return Err(Error::Format(format!("bad symmetry flag {f}"))),
            };
            let spec = CategorySpec {
                name,
                template,
                ranges,
                symmetry_axis,
            };
            spec.validate()?;
            categories.push(spec);
        }
        let ninst = r.u64()? as usize;
        let mut instances = Vec::with_capacity(ninst.min(1 << 16));
        for _ in 0..ninst {
            let c = r.u32()? as usize;
            let cat = categories
                .get(c)
                .ok_or_else(|| Error::Format(format!("category index {c} out of range")))?;
            let split = match r.u8()? {
                0 => Split::Train,
                1 => Split::Test,
                f => return Err(Error::Format(format!("bad split flag {f}"))),
            };
            let np = r.u32()? as usize;
            let params = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let cloud = read_cloud(&mut r)?;
            instances.push(Instance::from_parts(cat.name.clone(), params, cloud, split)?);
        }
        let nrec = r.u64()? as usize;
        let mut records = Vec::with_capacity(nrec.min(1 << 16));
        for _ in 0..nrec {
            let instance = r.u64()? as usize;
            if instance >= instances.len() {
                return Err(Error::Format(format!("record references instance {instance}")));
            }
            let mut a = [0.0; 7];
            for v in &mut a {
                *v = r.f64()?;
            }
            let pose = Pose::from_array(a)?;
            let observed = read_cloud(&mut r)?;
            records.push(ObservationRecord {
                instance,
                observed,
                pose,
            });
        }
        r.expect_end()?;
        let ds = Dataset {
            categories,
            points,
            obs_points,
            seed,
            provenance,
            instances,
            records,
        };
        ds.check_consistent()?;
        Ok(ds)
    }

    fn check_consistent(&self) -> Result<()> {
        for inst in &self.instances {
            self.category_index(&inst.category)?;
            if inst.canonical.len() != self.points {
                return Err(Error::Format(format!(
                    "instance has {} points, header says {}",
                    inst.canonical.len(),
                    self.points
                )));
            }
        }
        for rec in &self.records {
            if rec.instance >= self.instances.len() {
                return Err(Error::Format("record references a missing instance".into()));
            }
            if rec.observed.len() > self.obs_points {
                return Err(Error::Format(format!(
                    "observation has {} points, cap is {}",
                    rec.observed.len(),
                    self.obs_points
                )));
            }
        }
        Ok(())
    }
}

fn write_cloud(w: &mut ByteWriter, cloud: &PointCloud) {
    w.u32(cloud.len() as u32);
    for p in cloud.points() {
        p.iter().for_each(|&v| w.f32(v as f32));
    }
    match cloud.colors() {
        Some(c) => {
            w.u8(1);
            for p in c {
                p.iter().for_each(|&v| w.f32(v as f32));
            }
        }
        None => w.u8(0),
    }
}

fn read_cloud(r: &mut ByteReader<'_>) -> Result<PointCloud> {
    let n = r.u32()? as usize;
    let triple = |r: &mut ByteReader<'_>| -> Result<Vec3> {
        Ok([r.f32()? as f64, r.f32()? as f64, r.f32()? as f64])
    };
    let pts = (0..n).map(|_| triple(r)).collect::<Result<Vec<_>>>()?;
    match r.u8()? {
        0 => PointCloud::new(pts),
        1 => {
            let cols = (0..n).map(|_| triple(r)).collect::<Result<Vec<_>>>()?;
            PointCloud::with_colors(pts, cols)
        }
        f => Err(Error::Format(format!("bad color flag {f}"))),
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_bytes()?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_bytes(&std::fs::read(path)?)
}
