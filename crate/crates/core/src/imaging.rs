//! Synthetic light-sheet stacks, blob detection and frame linking.
//!
//! Voxel `(i, j, k)` has its center at `(i·dx, j·dy, k·dz)` µm. Data are
//! stored x-fastest.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fracture::{Face, FacePoint};
use crate::kinematics::{ParticleSet, ParticleTrack};
use crate::spatial::{Aabb, KdTree};
use crate::stats;
use crate::tensor3::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("volume dims must be >= 1 each, got {0:?}")]
    BadDims([usize; 3]),
    #[error("voxel sizes must be positive, got {0:?}")]
    BadVoxelSize([f64; 3]),
    #[error("data length {got} does not match dims ({expected})")]
    DataLength { got: usize, expected: usize },
    #[error("invalid imaging config: {0}")]
    Config(String),
    #[error("detection needs a scatter-channel volume")]
    WrongChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Scatter,
    Fluorescence,
}

impl Channel {
    pub fn tag(&self) -> u8 {
        match self {
            Channel::Scatter => 0,
            Channel::Fluorescence => 1,
        }
    }

    pub fn from_tag(t: u8) -> Option<Channel> {
        match t {
            0 => Some(Channel::Scatter),
            1 => Some(Channel::Fluorescence),
            _ => None,
        }
    }
}

pub const DEFAULT_VOXEL_UM: [f64; 3] = [0.68, 0.68, 2.0];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume {
    pub dims: [usize; 3],
    pub voxel_um: [f64; 3],
    pub channel: Channel,
    pub data: Vec<u16>,
}

impl VoxelVolume {
    pub fn zeros(
        dims: [usize; 3],
        voxel_um: [f64; 3],
        channel: Channel,
    ) -> Result<Self, ImagingError> {
        Self::from_data(dims, voxel_um, channel, vec![0; dims.iter().product()])
    }

    pub fn from_data(
        dims: [usize; 3],
        voxel_um: [f64; 3],
        channel: Channel,
        data: Vec<u16>,
    ) -> Result<Self, ImagingError> {
        if dims.contains(&0) {
            return Err(ImagingError::BadDims(dims));
        }
        if !voxel_um.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(ImagingError::BadVoxelSize(voxel_um));
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(ImagingError::DataLength {
                got: data.len(),
                expected,
            });
        }
        Ok(VoxelVolume {
            dims,
            voxel_um,
            channel,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u16 {
        self.data[self.index(i, j, k)]
    }

    pub fn position_um(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            i as f64 * self.voxel_um[0],
            j as f64 * self.voxel_um[1],
            k as f64 * self.voxel_um[2],
        )
    }

    /// Box spanned by the voxel centers.
    pub fn bounds_um(&self) -> Aabb {
        Aabb::new(
            Vec3::ZERO,
            self.position_um(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1),
        )
    }

    /// Copy with the content moved by whole voxels; uncovered voxels get `fill`.
    pub fn shifted(&self, offset: [isize; 3], fill: u16) -> VoxelVolume {
        let [nx, ny, nz] = self.dims;
        let mut data = vec![fill; self.data.len()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let (a, b, c) = (
                        i as isize + offset[0],
                        j as isize + offset[1],
                        k as isize + offset[2],
                    );
                    if a >= 0
                        && b >= 0
                        && c >= 0
                        && (a as usize) < nx
                        && (b as usize) < ny
                        && (c as usize) < nz
                    {
                        data[self.index(a as usize, b as usize, c as usize)] = self.get(i, j, k);
                    }
                }
            }
        }
        VoxelVolume {
            data,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub voxel_um: [f64; 3],
    pub psf_sigma_lateral_um: f64,
    pub psf_sigma_axial_um: f64,
    /// Peak intensity of an isolated blob at a voxel center.
    pub blob_amplitude: f64,
    pub noise_sigma: f64,
    pub offset: f64,
    /// Fluorescence level of the gel above the offset.
    pub gel_intensity: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            voxel_um: DEFAULT_VOXEL_UM,
            psf_sigma_lateral_um: 0.5,
            psf_sigma_axial_um: 4.0,
            blob_amplitude: 1000.0,
            noise_sigma: 100.0,
            offset: 500.0,
            gel_intensity: 2000.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if !self.voxel_um.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(ImagingError::BadVoxelSize(self.voxel_um));
        }
        if !(self.psf_sigma_lateral_um > 0.0 && self.psf_sigma_axial_um > 0.0) {
            return Err(ImagingError::Config("PSF sigmas must be > 0".into()));
        }
        for (name, v) in [
            ("blob amplitude", self.blob_amplitude),
            ("noise sigma", self.noise_sigma),
            ("offset", self.offset),
            ("gel intensity", self.gel_intensity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ImagingError::Config(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    fn psf_sigma_um(&self) -> [f64; 3] {
        [
            self.psf_sigma_lateral_um,
            self.psf_sigma_lateral_um,
            self.psf_sigma_axial_um,
        ]
    }
}

/// Crack void in the gel: behind `tip` (smaller x), a slot around
/// `y = tip.y` of full width `max(c·√r, min_gap)` with `r = tip.x − x` in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackVoid {
    pub tip: Vec3,
    /// Opening coefficient, µm^½.
    pub c_um: f64,
    pub min_gap_um: f64,
    pub z_range_um: [f64; 2],
}

impl CrackVoid {
    pub fn contains(&self, p: Vec3) -> bool {
        let r = self.tip.x - p.x;
        if r <= 0.0 || p.z < self.z_range_um[0] || p.z > self.z_range_um[1] {
            return false;
        }
        (p.y - self.tip.y).abs() < 0.5 * (self.c_um * r.sqrt()).max(self.min_gap_um)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Reference,
    Deformed,
}

#[derive(Debug, Clone)]
pub struct RenderedStack {
    pub scatter: VoxelVolume,
    pub fluorescence: VoxelVolume,
    /// Particles outside the voxel-center box, not drawn.
    pub clipped: usize,
}

fn slice_rng(seed: u64, channel: Channel, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((channel.tag() as u64) << 32) | k as u64);
    rng
}

fn quantize(v: f64) -> u16 {
    v.round().clamp(0.0, u16::MAX as f64) as u16
}

/// Render both channels of a stack with `dims` voxels.
pub fn render_stack(
    set: &ParticleSet,
    frame: Frame,
    dims: [usize; 3],
    cfg: &RenderConfig,
    void: Option<&CrackVoid>,
    seed: u64,
) -> Result<RenderedStack, ImagingError> {
    let positions: Vec<Vec3> = set
        .tracks()
        .iter()
        .map(|t| match frame {
            Frame::Reference => t.reference,
            Frame::Deformed => t.current,
        })
        .collect();
    render_points(&positions, dims, cfg, void, seed)
}

/// Render both channels from explicit particle positions (µm).
pub fn render_points(
    positions: &[Vec3],
    dims: [usize; 3],
    cfg: &RenderConfig,
    void: Option<&CrackVoid>,
    seed: u64,
) -> Result<RenderedStack, ImagingError> {
    cfg.validate()?;
    let mut scatter = VoxelVolume::zeros(dims, cfg.voxel_um, Channel::Scatter)?;
    let mut fluorescence = VoxelVolume::zeros(dims, cfg.voxel_um, Channel::Fluorescence)?;
    let bounds = scatter.bounds_um();
    let inside: Vec<Vec3> = positions
        .iter()
        .copied()
        .filter(|p| bounds.contains(*p))
        .collect();
    let clipped = positions.len() - inside.len();

    let [nx, ny, nz] = dims;
    let sig = cfg.psf_sigma_um();
    let reach: [f64; 3] = [4.0 * sig[0], 4.0 * sig[1], 4.0 * sig[2]];
    // Particles touching each slice, in input order.
    let mut per_slice: Vec<Vec<usize>> = vec![Vec::new(); nz];
    for (n, p) in inside.iter().enumerate() {
        let lo = ((p.z - reach[2]) / cfg.voxel_um[2]).ceil().max(0.0) as usize;
        let hi = (((p.z + reach[2]) / cfg.voxel_um[2]).floor() as usize).min(nz - 1);
        for s in per_slice.iter_mut().take(hi + 1).skip(lo) {
            s.push(n);
        }
    }

    let vox = cfg.voxel_um;
    scatter
        .data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slice)| {
            let z = k as f64 * vox[2];
            let mut acc = vec![0.0f64; nx * ny];
            for &n in &per_slice[k] {
                let p = inside[n];
                let gz = (-0.5 * ((z - p.z) / sig[2]).powi(2)).exp();
                let i0 = ((p.x - reach[0]) / vox[0]).ceil().max(0.0) as usize;
                let i1 = (((p.x + reach[0]) / vox[0]).floor() as usize).min(nx - 1);
                let j0 = ((p.y - reach[1]) / vox[1]).ceil().max(0.0) as usize;
                let j1 = (((p.y + reach[1]) / vox[1]).floor() as usize).min(ny - 1);
                for j in j0..=j1 {
                    let gy = (-0.5 * ((j as f64 * vox[1] - p.y) / sig[1]).powi(2)).exp();
                    for i in i0..=i1 {
                        let gx = (-0.5 * ((i as f64 * vox[0] - p.x) / sig[0]).powi(2)).exp();
                        acc[i + nx * j] += cfg.blob_amplitude * gx * gy * gz;
                    }
                }
            }
            let mut rng = slice_rng(seed, Channel::Scatter, k);
            for (out, a) in slice.iter_mut().zip(&acc) {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *out = quantize(cfg.offset + a + cfg.noise_sigma * noise);
            }
        });

    fluorescence
        .data
        .par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slice)| {
            let mut rng = slice_rng(seed, Channel::Fluorescence, k);
            for j in 0..ny {
                for i in 0..nx {
                    let p = Vec3::new(i as f64 * vox[0], j as f64 * vox[1], k as f64 * vox[2]);
                    let gel = if void.is_some_and(|v| v.contains(p)) {
                        0.0
                    } else {
                        cfg.gel_intensity
                    };
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    slice[i + nx * j] = quantize(cfg.offset + gel + cfg.noise_sigma * noise);
                }
            }
        });

    Ok(RenderedStack {
        scatter,
        fluorescence,
        clipped,
    })
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f32> {
    let r = (4.0 * sigma_vox).ceil().max(1.0) as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|t| (-0.5 * (t as f64 / sigma_vox).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| (v / s) as f32).collect()
}

/// Convolve along one axis with edge replication.
fn convolve_axis(src: &[f32], dims: [usize; 3], axis: usize, kernel: &[f32]) -> Vec<f32> {
    let [nx, ny, _] = dims;
    let n_axis = dims[axis];
    let stride = [1, nx, nx * ny][axis];
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0f32; src.len()];
    out.par_chunks_mut(nx * ny)
        .enumerate()
        .for_each(|(k, slice)| {
            for j in 0..ny {
                for i in 0..nx {
                    let pos = [i, j, k][axis] as isize;
                    let base = i + nx * (j + ny * k);
                    let mut acc = 0f32;
                    if pos - r >= 0 && pos + r < n_axis as isize {
                        let start = base - r as usize * stride;
                        for (t, w) in kernel.iter().enumerate() {
                            acc += w * src[start + t * stride];
                        }
                    } else {
                        for (t, w) in kernel.iter().enumerate() {
                            let q = (pos + t as isize - r).clamp(0, n_axis as isize - 1);
                            acc += w * src[(base as isize + (q - pos) * stride as isize) as usize];
                        }
                    }
                    slice[i + nx * j] = acc;
                }
            }
        });
    out
}

fn gaussian_blur(src: &[f32], dims: [usize; 3], sigma_vox: [f64; 3]) -> Vec<f32> {
    let a = convolve_axis(src, dims, 0, &gaussian_kernel(sigma_vox[0]));
    let b = convolve_axis(&a, dims, 1, &gaussian_kernel(sigma_vox[1]));
    drop(a);
    convolve_axis(&b, dims, 2, &gaussian_kernel(sigma_vox[2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PeakThreshold {
    /// Band-pass response units.
    Absolute { value: f64 },
    /// Quantile of the band-pass response over all voxels.
    Quantile { q: f64 },
    /// Multiple of the robust (MAD) noise level of the response.
    NoiseSigma { k: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Smaller band-pass Gaussian (lateral, axial), µm.
    pub bandpass_small_um: [f64; 2],
    /// Larger band-pass Gaussian (lateral, axial), µm.
    pub bandpass_large_um: [f64; 2],
    pub threshold: PeakThreshold,
    /// Centroid window half-size in voxels (x, y, z).
    #[serde(rename = "window_half_vox")]
    pub window_half: [usize; 3],
    pub subvoxel: Subvoxel,
}

/// Subvoxel localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subvoxel {
    /// Per-axis Gaussian (log-parabola) fit of the smoothed image at the peak.
    Gaussian,
    /// Weighted centroid of the positive band-pass response in the window.
    Centroid,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            bandpass_small_um: [0.5, 4.0],
            bandpass_large_um: [0.8, 6.4],
            threshold: PeakThreshold::NoiseSigma { k: 7.0 },
            window_half: [3, 3, 5],
            subvoxel: Subvoxel::Gaussian,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let s = self.bandpass_small_um;
        let l = self.bandpass_large_um;
        if !(s[0] > 0.0 && s[1] > 0.0 && l[0] > s[0] && l[1] > s[1]) {
            return Err(ImagingError::Config(
                "band-pass sigmas must be > 0 with large > small".into(),
            ));
        }
        let ok = match self.threshold {
            PeakThreshold::Absolute { value } => value >= 0.0,
            PeakThreshold::Quantile { q } => q > 0.0 && q < 1.0,
            PeakThreshold::NoiseSigma { k } => k >= 0.0,
        };
        if !ok {
            return Err(ImagingError::Config(format!(
                "invalid threshold {:?}",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedBlob {
    /// µm, subvoxel.
    pub centroid: Vec3,
    /// Raw intensity at the peak voxel.
    pub peak: f64,
    /// Band-pass response at the peak voxel.
    pub response: f64,
    /// Lateral FWHM from the window second moment, µm.
    pub diameter_um: f64,
    pub quality: f64,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub blobs: Vec<DetectedBlob>,
    pub threshold: f64,
    /// Voxels at the 16-bit ceiling.
    pub saturated_voxels: usize,
}

/// Small-scale smoothing and band-pass (difference of Gaussians) response.
fn filter(volume: &VoxelVolume, cfg: &DetectConfig) -> (Vec<f32>, Vec<f32>) {
    let v = volume.voxel_um;
    let src: Vec<f32> = volume.data.par_iter().map(|&x| x as f32).collect();
    let to_vox = |um: [f64; 2]| [um[0] / v[0], um[0] / v[1], um[1] / v[2]];
    let smooth = gaussian_blur(&src, volume.dims, to_vox(cfg.bandpass_small_um));
    let wide = gaussian_blur(&src, volume.dims, to_vox(cfg.bandpass_large_um));
    drop(src);
    let resp = smooth
        .par_iter()
        .zip(wide.par_iter())
        .map(|(a, b)| a - b)
        .collect();
    (smooth, resp)
}

/// Band-pass response (difference of Gaussians) of a volume.
pub fn bandpass(volume: &VoxelVolume, cfg: &DetectConfig) -> Vec<f32> {
    filter(volume, cfg).1
}

fn sampled_median(values: &[f32]) -> f64 {
    let step = (values.len() / 4_000_000).max(1);
    let sample: Vec<f64> = values.iter().step_by(step).map(|&x| x as f64).collect();
    stats::median(&sample).unwrap_or(0.0)
}

fn resolve_threshold(resp: &[f32], t: PeakThreshold) -> f64 {
    match t {
        PeakThreshold::Absolute { value } => value,
        PeakThreshold::Quantile { q } => {
            let mut v: Vec<f64> = resp.iter().map(|&x| x as f64).collect();
            let k = ((v.len() - 1) as f64 * q).round() as usize;
            let (_, x, _) = v.select_nth_unstable_by(k, f64::total_cmp);
            *x
        }
        PeakThreshold::NoiseSigma { k } => {
            let med = sampled_median(resp);
            let dev: Vec<f32> = resp
                .iter()
                .map(|&x| (x as f64 - med).abs() as f32)
                .collect();
            med + k * 1.4826 * sampled_median(&dev)
        }
    }
}

/// Local maxima of the band-pass response above threshold, refined by an
/// intensity-weighted centroid of the positive response in a window.
pub fn detect(volume: &VoxelVolume, cfg: &DetectConfig) -> Result<Detection, ImagingError> {
    if volume.channel != Channel::Scatter {
        return Err(ImagingError::WrongChannel);
    }
    cfg.validate()?;
    let saturated_voxels = volume.data.par_iter().filter(|&&x| x == u16::MAX).count();
    let (smooth, resp) = filter(volume, cfg);
    let threshold = resolve_threshold(&resp, cfg.threshold);
    let background = sampled_median(&smooth);
    let ctx = Refine {
        volume,
        smooth: &smooth,
        resp: &resp,
        cfg,
        threshold,
        background,
    };
    let [nx, ny, nz] = volume.dims;
    let idx = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

    let blobs: Vec<DetectedBlob> = (0..nz)
        .into_par_iter()
        .flat_map_iter(|k| {
            let resp = &resp;
            let ctx = &ctx;
            let mut found = Vec::new();
            for j in 0..ny {
                for i in 0..nx {
                    let c = idx(i, j, k);
                    let v = resp[c];
                    if !(v as f64 > threshold) {
                        continue;
                    }
                    if is_local_max(resp, volume.dims, i, j, k, c) {
                        found.push(ctx.refine([i, j, k]));
                    }
                }
            }
            found
        })
        .collect();
    Ok(Detection {
        blobs,
        threshold,
        saturated_voxels,
    })
}

/// Strict maximum over the 26-neighborhood, ties going to the lower index.
fn is_local_max(resp: &[f32], dims: [usize; 3], i: usize, j: usize, k: usize, c: usize) -> bool {
    let [nx, ny, nz] = dims;
    let v = resp[c];
    for dk in -1isize..=1 {
        for dj in -1isize..=1 {
            for di in -1isize..=1 {
                if di == 0 && dj == 0 && dk == 0 {
                    continue;
                }
                let (a, b, e) = (i as isize + di, j as isize + dj, k as isize + dk);
                if a < 0
                    || b < 0
                    || e < 0
                    || a >= nx as isize
                    || b >= ny as isize
                    || e >= nz as isize
                {
                    continue;
                }
                let n = a as usize + nx * (b as usize + ny * e as usize);
                let w = resp[n];
                if w > v || (w == v && n < c) {
                    return false;
                }
            }
        }
    }
    true
}

struct Refine<'a> {
    volume: &'a VoxelVolume,
    smooth: &'a [f32],
    resp: &'a [f32],
    cfg: &'a DetectConfig,
    threshold: f64,
    background: f64,
}

impl Refine<'_> {
    fn refine(&self, peak: [usize; 3]) -> DetectedBlob {
        let volume = self.volume;
        let half = self.cfg.window_half;
        let [nx, ny, _] = volume.dims;
        let mut sw = 0.0;
        let mut m1 = [0.0f64; 3];
        let mut m2 = [0.0f64; 2];
        let lo: Vec<isize> = (0..3).map(|a| -(half[a].min(peak[a]) as isize)).collect();
        let hi: Vec<isize> = (0..3)
            .map(|a| half[a].min(volume.dims[a] - 1 - peak[a]) as isize)
            .collect();
        for dk in lo[2]..=hi[2] {
            for dj in lo[1]..=hi[1] {
                for di in lo[0]..=hi[0] {
                    let n = (peak[0] as isize + di) as usize
                        + nx * ((peak[1] as isize + dj) as usize
                            + ny * (peak[2] as isize + dk) as usize);
                    let w = self.resp[n].max(0.0) as f64;
                    sw += w;
                    m1[0] += w * di as f64;
                    m1[1] += w * dj as f64;
                    m1[2] += w * dk as f64;
                    m2[0] += w * (di * di) as f64;
                    m2[1] += w * (dj * dj) as f64;
                }
            }
        }
        let centroid_frac: Vec<f64> = m1.iter().map(|m| m / sw).collect();
        let frac: Vec<f64> = match self.cfg.subvoxel {
            Subvoxel::Centroid => centroid_frac.clone(),
            Subvoxel::Gaussian => (0..3)
                .map(|a| self.log_parabola(peak, a).unwrap_or(centroid_frac[a]))
                .collect(),
        };
        let v = volume.voxel_um;
        let centroid = Vec3::new(
            (peak[0] as f64 + frac[0]) * v[0],
            (peak[1] as f64 + frac[1]) * v[1],
            (peak[2] as f64 + frac[2]) * v[2],
        );
        let cf = &centroid_frac;
        let var_lat = 0.5
            * ((m2[0] / sw - cf[0] * cf[0]) * v[0] * v[0]
                + (m2[1] / sw - cf[1] * cf[1]) * v[1] * v[1]);
        let c = volume.index(peak[0], peak[1], peak[2]);
        let response = self.resp[c] as f64;
        let t = self.threshold.max(0.0);
        DetectedBlob {
            centroid,
            peak: volume.data[c] as f64,
            response,
            diameter_um: 2.0 * (2.0 * 2f64.ln()).sqrt() * var_lat.max(0.0).sqrt(),
            quality: if response > 0.0 {
                (1.0 - t / response).clamp(0.0, 1.0)
            } else {
                0.0
            },
        }
    }

    /// Vertex of the parabola through the logs of the three background-
    /// subtracted smoothed values around the peak along `axis`. Exact for a
    /// sampled Gaussian.
    fn log_parabola(&self, peak: [usize; 3], axis: usize) -> Option<f64> {
        if peak[axis] == 0 || peak[axis] + 1 >= self.volume.dims[axis] {
            return None;
        }
        let at = |d: isize| {
            let mut p = peak;
            p[axis] = (p[axis] as isize + d) as usize;
            self.smooth[self.volume.index(p[0], p[1], p[2])] as f64 - self.background
        };
        let (a, b, c) = (at(-1), at(0), at(1));
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return None;
        }
        let (la, lb, lc) = (a.ln(), b.ln(), c.ln());
        let den = la - 2.0 * lb + lc;
        if !(den < 0.0) {
            return None;
        }
        Some((0.5 * (la - lc) / den).clamp(-1.0, 1.0))
    }
}

/// Otsu threshold: the level maximizing between-class variance.
pub fn otsu_threshold(volume: &VoxelVolume) -> u16 {
    let mut hist = vec![0u64; 1 << 16];
    for &v in &volume.data {
        hist[v as usize] += 1;
    }
    let total = volume.data.len() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0u16);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let d = sum0 / w0 - (sum_all - sum0) / w1;
        let between = w0 * w1 * d * d;
        if between > best {
            best = between;
            best_t = t as u16;
        }
    }
    best_t
}

/// Gel voxels (above the Otsu level) bordering void along y. A gel voxel with
/// void below it is on the upper face. Points sit on the voxel boundary.
pub fn extract_crack_faces(fluorescence: &VoxelVolume) -> (Vec<FacePoint>, u16) {
    let t = otsu_threshold(fluorescence);
    let [nx, ny, nz] = fluorescence.dims;
    let gel = |i, j, k| fluorescence.get(i, j, k) > t;
    let dy = fluorescence.voxel_um[1];
    let mut out = Vec::new();
    for k in 0..nz {
        for i in 0..nx {
            for j in 0..ny {
                if !gel(i, j, k) {
                    continue;
                }
                let p = fluorescence.position_um(i, j, k);
                if j > 0 && !gel(i, j - 1, k) {
                    out.push(FacePoint {
                        face: Face::Upper,
                        position: p - Vec3::Y * (0.5 * dy),
                    });
                }
                if j + 1 < ny && !gel(i, j + 1, k) {
                    out.push(FacePoint {
                        face: Face::Lower,
                        position: p + Vec3::Y * (0.5 * dy),
                    });
                }
            }
        }
    }
    (out, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub max_displacement_um: f64,
    /// Re-match around positions predicted from a coarse displacement field.
    pub predictor: bool,
    pub predictor_cell_um: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            max_displacement_um: 10.0,
            predictor: false,
            predictor_cell_um: 50.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinkResult {
    /// Track id = index into the reference blobs.
    pub tracks: Vec<ParticleTrack>,
    /// `(reference index, deformed index)`, sorted by reference index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_reference: Vec<usize>,
    pub unmatched_deformed: Vec<usize>,
}

fn mutual_nearest(from: &[Vec3], to: &[Vec3], max_d: f64) -> Vec<(usize, usize)> {
    if from.is_empty() || to.is_empty() {
        return Vec::new();
    }
    let keys_to: Vec<u64> = (0..to.len() as u64).collect();
    let keys_from: Vec<u64> = (0..from.len() as u64).collect();
    let tree_to = KdTree::new(to.to_vec(), keys_to);
    let tree_from = KdTree::new(from.to_vec(), keys_from);
    let max_sq = max_d * max_d;
    (0..from.len())
        .into_par_iter()
        .filter_map(|a| {
            let nb = tree_to.knn(from[a], 1).into_iter().next()?;
            if nb.dist_sq > max_sq {
                return None;
            }
            let back = tree_from.knn(to[nb.index], 1).into_iter().next()?;
            (back.index == a).then_some((a, nb.index))
        })
        .collect()
}

fn median_field(
    matches: &[(usize, usize)],
    reference: &[Vec3],
    deformed: &[Vec3],
    cell: f64,
) -> impl Fn(Vec3) -> Vec3 {
    use std::collections::BTreeMap;
    let key = move |p: Vec3| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut groups: BTreeMap<(i64, i64, i64), Vec<Vec3>> = BTreeMap::new();
    for &(a, b) in matches {
        groups
            .entry(key(reference[a]))
            .or_default()
            .push(deformed[b] - reference[a]);
    }
    let med = |ds: &[Vec3]| {
        let comp = |f: fn(&Vec3) -> f64| {
            stats::median(&ds.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0)
        };
        Vec3::new(comp(|v| v.x), comp(|v| v.y), comp(|v| v.z))
    };
    let cells: BTreeMap<(i64, i64, i64), Vec3> = groups.iter().map(|(k, v)| (*k, med(v))).collect();
    // Cells without matches borrow from the nearest populated cell.
    move |p: Vec3| {
        let k = key(p);
        if let Some(v) = cells.get(&k) {
            return *v;
        }
        let d2 = |c: &(i64, i64, i64)| (c.0 - k.0).pow(2) + (c.1 - k.1).pow(2) + (c.2 - k.2).pow(2);
        cells
            .iter()
            .min_by_key(|(c, _)| d2(c))
            .map(|(_, v)| *v)
            .unwrap_or(Vec3::ZERO)
    }
}

/// Mutual-nearest-neighbor linking of reference to deformed blobs.
pub fn link(
    reference: &[DetectedBlob],
    deformed: &[DetectedBlob],
    cfg: &LinkConfig,
) -> Result<LinkResult, ImagingError> {
    if !(cfg.max_displacement_um > 0.0) || (cfg.predictor && !(cfg.predictor_cell_um > 0.0)) {
        return Err(ImagingError::Config("link distances must be > 0".into()));
    }
    let r: Vec<Vec3> = reference.iter().map(|b| b.centroid).collect();
    let d: Vec<Vec3> = deformed.iter().map(|b| b.centroid).collect();
    let mut matches = mutual_nearest(&r, &d, cfg.max_displacement_um);
    if cfg.predictor && !matches.is_empty() {
        let field = median_field(&matches, &r, &d, cfg.predictor_cell_um);
        let predicted: Vec<Vec3> = r.iter().map(|&p| p + field(p)).collect();
        matches = mutual_nearest(&predicted, &d, cfg.max_displacement_um);
    }
    matches.sort_unstable();
    let mut used_r = vec![false; r.len()];
    let mut used_d = vec![false; d.len()];
    let tracks = matches
        .iter()
        .map(|&(a, b)| {
            used_r[a] = true;
            used_d[b] = true;
            let mut t = ParticleTrack::new(a as u64, r[a], d[b]);
            t.quality = reference[a]
                .quality
                .min(deformed[b].quality)
                .clamp(0.0, 1.0);
            t
        })
        .collect();
    Ok(LinkResult {
        tracks,
        matches,
        unmatched_reference: (0..r.len()).filter(|&i| !used_r[i]).collect(),
        unmatched_deformed: (0..d.len()).filter(|&i| !used_d[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> RenderConfig {
        RenderConfig {
            noise_sigma: 0.0,
            ..Default::default()
        }
    }

    fn abs_threshold(v: f64) -> DetectConfig {
        DetectConfig {
            threshold: PeakThreshold::Absolute { value: v },
            ..Default::default()
        }
    }

    #[test]
    fn single_blob_at_voxel_center() {
        let cfg = quiet();
        let p = Vec3::new(20.0 * 0.68, 20.0 * 0.68, 10.0 * 2.0);
        let st = render_points(&[p], [40, 40, 20], &cfg, None, 1).unwrap();
        let v = &st.scatter;
        let argmax = (0..v.len())
            .max_by_key(|&n| (v.data[n], std::cmp::Reverse(n)))
            .unwrap();
        assert_eq!(argmax, v.index(20, 20, 10));
        let det = detect(v, &abs_threshold(10.0)).unwrap();
        assert_eq!(det.blobs.len(), 1);
        let c = det.blobs[0].centroid;
        for a in 0..3 {
            assert!(((c[a] - p[a]) / cfg.voxel_um[a]).abs() < 1e-3, "{c} vs {p}");
        }
        assert!(det.blobs[0].quality > 0.0 && det.blobs[0].quality <= 1.0);
    }

    #[test]
    fn empty_and_pure_noise() {
        let v = VoxelVolume::zeros([16, 16, 8], DEFAULT_VOXEL_UM, Channel::Scatter).unwrap();
        assert!(detect(&v, &DetectConfig::default())
            .unwrap()
            .blobs
            .is_empty());
        let st = render_points(&[], [32, 32, 16], &RenderConfig::default(), None, 3).unwrap();
        let mean = st.scatter.data.iter().map(|&x| x as f64).sum::<f64>() / st.scatter.len() as f64;
        assert!((mean - 500.0).abs() < 5.0);
        assert!(detect(&st.scatter, &DetectConfig::default())
            .unwrap()
            .blobs
            .is_empty());
    }

    #[test]
    fn two_blobs_ten_voxels_apart() {
        let a = Vec3::new(15.3 * 0.68, 20.1 * 0.68, 10.4 * 2.0);
        let b = a + Vec3::new(10.0 * 0.68, 0.0, 0.0);
        let st = render_points(&[a, b], [48, 40, 22], &RenderConfig::default(), None, 9).unwrap();
        assert_eq!(
            detect(&st.scatter, &DetectConfig::default())
                .unwrap()
                .blobs
                .len(),
            2
        );
    }

    #[test]
    fn render_is_deterministic_and_clips() {
        let pts = [Vec3::new(5.0, 5.0, 5.0), Vec3::new(-1.0, 0.0, 0.0)];
        let a = render_points(&pts, [20, 20, 10], &RenderConfig::default(), None, 4).unwrap();
        let b = render_points(&pts, [20, 20, 10], &RenderConfig::default(), None, 4).unwrap();
        assert_eq!(a.scatter, b.scatter);
        assert_eq!(a.fluorescence, b.fluorescence);
        assert_eq!(a.clipped, 1);
    }

    #[test]
    fn translation_equivariance() {
        // Kept well inside the band-pass reach (13 slices axially) of every edge.
        let pts = [Vec3::new(12.3, 14.1, 51.0), Vec3::new(20.2, 12.7, 70.5)];
        let st = render_points(&pts, [48, 40, 64], &RenderConfig::default(), None, 5).unwrap();
        let cfg = DetectConfig {
            threshold: PeakThreshold::Absolute { value: 60.0 },
            ..Default::default()
        };
        let base = detect(&st.scatter, &cfg).unwrap();
        let shift = [3isize, -2, 1];
        let moved = detect(&st.scatter.shifted(shift, 500), &cfg).unwrap();
        assert_eq!(base.blobs.len(), 2);
        assert_eq!(moved.blobs.len(), 2);
        for (a, b) in base.blobs.iter().zip(&moved.blobs) {
            let want = a.centroid
                + Vec3::new(
                    shift[0] as f64 * 0.68,
                    shift[1] as f64 * 0.68,
                    shift[2] as f64 * 2.0,
                );
            // The background median changes slightly as the shift swaps edge voxels for fill.
            assert!(
                (b.centroid - want).max_abs() < 1e-4,
                "{} vs {want}",
                b.centroid
            );
        }
    }

    #[test]
    fn otsu_and_faces() {
        let cfg = RenderConfig {
            voxel_um: [2.0, 1.0, 2.0],
            ..Default::default()
        };
        let void = CrackVoid {
            tip: Vec3::new(60.0, 30.0, 0.0),
            c_um: 2.0,
            min_gap_um: 0.0,
            z_range_um: [0.0, 100.0],
        };
        let st = render_points(&[], [40, 60, 3], &cfg, Some(&void), 2).unwrap();
        let (faces, t) = extract_crack_faces(&st.fluorescence);
        assert!(t > 700 && t < 2300, "{t}");
        assert!(
            faces.iter().any(|f| f.face == Face::Upper)
                && faces.iter().any(|f| f.face == Face::Lower)
        );
        for f in &faces {
            let r = 60.0 - f.position.x;
            let half = 0.5 * 2.0 * r.sqrt();
            let dy = (f.position.y - 30.0).abs();
            assert!((dy - half).abs() <= 1.0, "r {r} dy {dy} half {half}");
        }
    }

    fn blob(p: Vec3) -> DetectedBlob {
        DetectedBlob {
            centroid: p,
            peak: 1.0,
            response: 1.0,
            diameter_um: 1.0,
            quality: 1.0,
        }
    }

    fn lattice() -> Vec<DetectedBlob> {
        let mut v = Vec::new();
        for k in 0..5 {
            for j in 0..5 {
                for i in 0..5 {
                    v.push(blob(Vec3::new(
                        i as f64 * 20.0,
                        j as f64 * 20.0,
                        k as f64 * 20.0,
                    )));
                }
            }
        }
        v
    }

    #[test]
    fn link_identity_and_translation() {
        let a = lattice();
        let r = link(&a, &a, &LinkConfig::default()).unwrap();
        assert_eq!(r.tracks.len(), a.len());
        assert!(r.tracks.iter().all(|t| t.displacement() == Vec3::ZERO));
        let d = Vec3::new(3.0, -2.0, 1.0);
        let b: Vec<DetectedBlob> = a.iter().map(|x| blob(x.centroid + d)).collect();
        let r = link(&a, &b, &LinkConfig::default()).unwrap();
        assert_eq!(r.matches.len(), a.len());
        assert!(r.matches.iter().all(|&(i, j)| i == j));
        assert!(r.unmatched_reference.is_empty() && r.unmatched_deformed.is_empty());
    }

    #[test]
    fn link_is_symmetric() {
        let a = lattice();
        let b: Vec<DetectedBlob> = a
            .iter()
            .enumerate()
            .map(|(n, x)| {
                blob(x.centroid + Vec3::new((n % 7) as f64 - 3.0, (n % 5) as f64 - 2.0, 0.5))
            })
            .collect();
        let fwd = link(&a, &b, &LinkConfig::default()).unwrap();
        let mut back: Vec<(usize, usize)> = link(&b, &a, &LinkConfig::default())
            .unwrap()
            .matches
            .into_iter()
            .map(|(x, y)| (y, x))
            .collect();
        back.sort_unstable();
        assert_eq!(fwd.matches, back);
    }

    #[test]
    fn predictor_extends_reach() {
        // u = 0.12·x: beyond x = 50 the displacement exceeds the search radius.
        let a = lattice();
        let b: Vec<DetectedBlob> = a
            .iter()
            .map(|x| blob(x.centroid + Vec3::new(0.12 * x.centroid.x, 0.0, 0.0)))
            .collect();
        let cfg = LinkConfig {
            max_displacement_um: 6.0,
            predictor: false,
            predictor_cell_um: 40.0,
        };
        let plain = link(&a, &b, &cfg).unwrap();
        assert!(plain.matches.iter().all(|&(i, j)| i == j));
        assert_eq!(plain.matches.len(), 75);
        let pred = link(
            &a,
            &b,
            &LinkConfig {
                predictor: true,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(pred.matches.len(), a.len());
        assert!(pred.matches.iter().all(|&(i, j)| i == j));
    }
}
