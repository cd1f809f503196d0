use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::volume::{Volume, CLINICAL_SPACING};
use crate::CoreError;

/// Axis-aligned ellipsoid in voxel coordinates, (z, y, x) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let mut q = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.radii[a];
            q += d * d;
        }
        q <= 1.0
    }

    fn within_dims(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| {
            self.center[a] - self.radii[a] >= 0.0
                && self.center[a] + self.radii[a] <= (dims[a] - 1) as f64
        })
    }

    /// True when a sphere of radius r centered at p fits entirely inside.
    fn contains_sphere(&self, p: [f64; 3], r: f64) -> bool {
        if self.radii.iter().any(|&rad| rad <= r) {
            return false;
        }
        let mut q = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / (self.radii[a] - r);
            q += d * d;
        }
        q <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Organ {
    pub shape: Ellipsoid,
    pub uptake: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub count: usize,
    pub radius_range: [f64; 2],
    /// Multiplies the local uptake inside each lesion sphere.
    pub uptake_mult: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    /// Relative modulation strength applied inside organs.
    pub amplitude: f64,
    /// Gaussian smoothing sigma (voxels) of the underlying noise field.
    pub smoothness: f64,
}

/// Everything needed to synthesize one activity distribution plus its
/// acquisition model. Organs overwrite the body uptake in declaration order;
/// texture modulates organ voxels; lesions multiply whatever is local.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing: [f32; 3],
    pub base_uptake: f64,
    pub body: Ellipsoid,
    #[serde(default)]
    pub organs: Vec<Organ>,
    #[serde(default)]
    pub lesions: Option<LesionSpec>,
    #[serde(default)]
    pub texture: Option<TextureSpec>,
    /// Acquisition point-spread sigma in voxels.
    pub psf_sigma: f64,
    /// Expected counts per unit activity at full dose.
    pub sensitivity: f64,
}

fn default_spacing() -> [f32; 3] {
    CLINICAL_SPACING
}

impl PhantomSpec {
    /// Small torso-like phantom that generates and trains in desk time.
    pub fn desk() -> Self {
        PhantomSpec {
            dims: [32, 96, 96],
            spacing: CLINICAL_SPACING,
            base_uptake: 1.0,
            body: Ellipsoid { center: [15.5, 47.5, 47.5], radii: [14.5, 42.0, 44.0] },
            organs: vec![
                Organ {
                    shape: Ellipsoid { center: [14.0, 40.0, 30.0], radii: [9.0, 18.0, 17.0] },
                    uptake: 2.2,
                },
                Organ {
                    shape: Ellipsoid { center: [17.0, 34.0, 62.0], radii: [7.0, 11.0, 11.0] },
                    uptake: 3.5,
                },
                Organ {
                    shape: Ellipsoid { center: [16.0, 66.0, 52.0], radii: [8.0, 14.0, 20.0] },
                    uptake: 0.5,
                },
            ],
            lesions: Some(LesionSpec { count: 4, radius_range: [2.0, 4.0], uptake_mult: 2.5 }),
            texture: Some(TextureSpec { amplitude: 0.1, smoothness: 2.0 }),
            psf_sigma: 1.0,
            sensitivity: 50.0,
        }
    }

    pub fn acq_params(&self) -> AcqParams {
        AcqParams { sensitivity: self.sensitivity, psf_sigma: self.psf_sigma }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(CoreError::config(format!("phantom dims must be positive, got {:?}", self.dims)));
        }
        if self.base_uptake < 0.0 {
            return Err(CoreError::config(format!("base uptake must be >= 0, got {}", self.base_uptake)));
        }
        if self.body.radii.iter().any(|&r| r <= 0.0) {
            return Err(CoreError::config(format!("body radii must be positive, got {:?}", self.body.radii)));
        }
        if !self.body.within_dims(self.dims) {
            return Err(CoreError::config(format!(
                "body ellipsoid {:?} extends outside dims {:?}",
                self.body, self.dims
            )));
        }
        for (i, organ) in self.organs.iter().enumerate() {
            if organ.uptake < 0.0 {
                return Err(CoreError::config(format!("organ {i} uptake must be >= 0, got {}", organ.uptake)));
            }
            if organ.shape.radii.iter().any(|&r| r <= 0.0) {
                return Err(CoreError::config(format!("organ {i} radii must be positive")));
            }
            if !organ.shape.within_dims(self.dims) {
                return Err(CoreError::config(format!(
                    "organ {i} ellipsoid {:?} extends outside dims {:?}",
                    organ.shape, self.dims
                )));
            }
        }
        if let Some(lesions) = &self.lesions {
            let [lo, hi] = lesions.radius_range;
            if !(lo > 0.0 && hi >= lo) {
                return Err(CoreError::config(format!(
                    "lesion radius range must satisfy 0 < lo <= hi, got {:?}",
                    lesions.radius_range
                )));
            }
            if lesions.uptake_mult < 0.0 {
                return Err(CoreError::config("lesion uptake multiplier must be >= 0".to_string()));
            }
        }
        if let Some(tex) = &self.texture {
            if tex.amplitude < 0.0 || tex.smoothness <= 0.0 {
                return Err(CoreError::config(format!(
                    "texture needs amplitude >= 0 and smoothness > 0, got {tex:?}"
                )));
            }
        }
        if self.psf_sigma < 0.0 {
            return Err(CoreError::config(format!("psf sigma must be >= 0, got {}", self.psf_sigma)));
        }
        if !(self.sensitivity > 0.0) {
            return Err(CoreError::config(format!("sensitivity must be positive, got {}", self.sensitivity)));
        }
        Ok(())
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur with zero boundary, one pass per axis.
fn gaussian_blur_3d(data: &mut [f64], dims: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let (nz, ny, nx) = (dims[0] as isize, dims[1] as isize, dims[2] as isize);
    let idx = |z: isize, y: isize, x: isize| ((z * ny + y) * nx + x) as usize;
    let mut tmp = vec![0.0; data.len()];
    for (axis, extent) in [(0, nz), (1, ny), (2, nx)] {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let pos = [z, y, x];
                    let mut acc = 0.0;
                    for (ti, &t) in taps.iter().enumerate() {
                        let off = ti as isize - radius;
                        let mut p = pos;
                        p[axis] += off;
                        if p[axis] < 0 || p[axis] >= extent {
                            continue;
                        }
                        acc += t * data[idx(p[0], p[1], p[2])];
                    }
                    tmp[idx(z, y, x)] = acc;
                }
            }
        }
        data.copy_from_slice(&tmp);
    }
}

/// Deterministic activity synthesis. Draw order is fixed: texture noise over
/// the full grid first, then lesion placement, so identical seeds give
/// bit-identical volumes.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Volume, CoreError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let [nz, ny, nx] = spec.dims;
    let n = nz * ny * nx;

    let mut activity = vec![0.0f64; n];
    let mut organ_mask = vec![false; n];
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [z as f64, y as f64, x as f64];
                if spec.body.contains(p) {
                    let mut v = spec.base_uptake;
                    for organ in &spec.organs {
                        if organ.shape.contains(p) {
                            v = organ.uptake;
                            organ_mask[i] = true;
                        }
                    }
                    activity[i] = v;
                }
                i += 1;
            }
        }
    }

    if let Some(tex) = &spec.texture {
        let mut field: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        gaussian_blur_3d(&mut field, spec.dims, tex.smoothness);
        let mean = field.iter().sum::<f64>() / n as f64;
        let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-12);
        for (v, (&f, &inside)) in activity.iter_mut().zip(field.iter().zip(&organ_mask)) {
            if inside {
                *v *= (1.0 + tex.amplitude * (f - mean) / std).max(0.0);
            }
        }
    }

    if let Some(lesions) = &spec.lesions {
        for li in 0..lesions.count {
            let mut placed = false;
            for _ in 0..10_000 {
                let r = rng.gen_range(lesions.radius_range[0]..=lesions.radius_range[1]);
                let c = [
                    rng.gen_range(0.0..nz as f64),
                    rng.gen_range(0.0..ny as f64),
                    rng.gen_range(0.0..nx as f64),
                ];
                if !spec.body.contains_sphere(c, r) {
                    continue;
                }
                let r2 = r * r;
                let mut i = 0;
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let dz = z as f64 - c[0];
                            let dy = y as f64 - c[1];
                            let dx = x as f64 - c[2];
                            if dz * dz + dy * dy + dx * dx <= r2 {
                                activity[i] *= lesions.uptake_mult;
                            }
                            i += 1;
                        }
                    }
                }
                placed = true;
                break;
            }
            if !placed {
                return Err(CoreError::config(format!(
                    "could not place lesion {li} inside the body after 10000 tries"
                )));
            }
        }
    }

    let mut vol = Volume::new(spec.dims, spec.spacing, activity.iter().map(|&v| v as f32).collect())?;
    vol.set_provenance(format!("phantom seed={seed}"));
    Ok(vol)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcqParams {
    pub sensitivity: f64,
    pub psf_sigma: f64,
}

/// Count-statistics acquisition model: expected counts are
/// activity * dose_fraction * sensitivity, sampled per voxel as Poisson,
/// rescaled back to activity units, then blurred by the PSF.
pub fn simulate_acquisition(
    activity: &Volume,
    dose_fraction: f64,
    params: &AcqParams,
    seed: u64,
) -> Result<Volume, CoreError> {
    if !(dose_fraction > 0.0 && dose_fraction <= 1.0) {
        return Err(CoreError::config(format!(
            "dose fraction must lie in (0, 1], got {dose_fraction}"
        )));
    }
    if !(params.sensitivity > 0.0) {
        return Err(CoreError::config(format!(
            "sensitivity must be positive, got {}",
            params.sensitivity
        )));
    }
    if activity.data().iter().any(|&v| v < 0.0) {
        return Err(CoreError::config("activity must be nonnegative".to_string()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gain = dose_fraction * params.sensitivity;
    let mut acquired: Vec<f64> = activity
        .data()
        .iter()
        .map(|&a| {
            let lambda = a as f64 * gain;
            if lambda <= 0.0 {
                return 0.0;
            }
            let counts: f64 = Poisson::new(lambda).expect("positive lambda").sample(&mut rng);
            counts / gain
        })
        .collect();
    gaussian_blur_3d(&mut acquired, activity.dims(), params.psf_sigma);
    let mut out = Volume::new(
        activity.dims(),
        activity.spacing(),
        acquired.iter().map(|&v| (v as f32).max(0.0)).collect(),
    )?;
    out.set_provenance(format!(
        "{} | acquired dose={dose_fraction} seed={seed}",
        activity.provenance()
    ));
    Ok(out)
}
