//! Synthetic camera corpus.
//!
//! Scenes are dead-leaves collages of textured discs. Each camera profile
//! renders a scene through a fixed multiplicative sensor pattern (a PRNU
//! analogue), a gamma curve, spatially correlated Poisson-Gaussian noise and
//! JPEG compression. Everything produced here is synthetic.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::RgbImage;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{decode_jpeg, encode_jpeg};
use crate::imaging::{array_to_rgb, rgb_to_array};
use crate::parallel::map_indexed;
use crate::{Error, Result};

/// Gamma assumed when linearising scene colours.
const SCENE_GAMMA: f64 = 2.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraProfile {
    pub name: String,
    /// Standard deviation of the multiplicative sensor pattern.
    pub prnu_strength: f64,
    /// Signal-dependent noise variance per display unit.
    pub shot_noise: f64,
    /// Signal-independent noise standard deviation, display units.
    pub read_noise: f64,
    /// Orientation of the noise correlation, degrees.
    pub noise_angle_deg: f64,
    /// Correlation length along `noise_angle_deg` in pixels; 0 gives white noise.
    pub noise_elongation: f64,
    /// Fraction of the noise shared across colour channels, in `[0, 1]`.
    pub channel_correlation: f64,
    /// White-balance gains applied in linear light.
    pub channel_gains: [f64; 3],
    pub gamma: f64,
    pub jpeg_quality: u8,
}

impl CameraProfile {
    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Err(Error::config(format!("profiles.{}.{name}", self.name), reason));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return field("name", "must be a non-empty plain directory name");
        }
        if !(0.0..0.5).contains(&self.prnu_strength) {
            return field("prnu_strength", "must be in [0, 0.5)");
        }
        if !(self.shot_noise >= 0.0 && self.read_noise >= 0.0) {
            return field("shot_noise", "noise parameters must be >= 0");
        }
        if !(0.0..=4.0).contains(&self.noise_elongation) {
            return field("noise_elongation", "must be in [0, 4]");
        }
        if !(0.0..=1.0).contains(&self.channel_correlation) {
            return field("channel_correlation", "must be in [0, 1]");
        }
        if self.channel_gains.iter().any(|g| !(*g > 0.0)) {
            return field("channel_gains", "must be > 0");
        }
        if !(self.gamma > 0.5 && self.gamma < 5.0) {
            return field("gamma", "must be in (0.5, 5)");
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return field("jpeg_quality", "must be in [1, 100]");
        }
        Ok(())
    }

    /// `count` distinct profiles; the noise orientation rotates with the
    /// camera index and the remaining parameters cycle through fixed tables.
    pub fn defaults(count: usize) -> Vec<CameraProfile> {
        const GAMMA: [f64; 4] = [2.2, 2.0, 2.4, 1.8];
        const QUALITY: [u8; 4] = [95, 93, 97, 91];
        const RHO: [f64; 4] = [0.2, 0.8, 0.3, 0.6];
        const GAINS: [[f64; 3]; 4] = [
            [1.0, 1.0, 1.0],
            [1.04, 1.0, 0.95],
            [0.96, 1.0, 1.04],
            [1.02, 0.98, 1.0],
        ];
        (0..count)
            .map(|i| CameraProfile {
                name: format!("cam_{}", camera_letter(i)),
                prnu_strength: 0.02,
                shot_noise: 0.1,
                read_noise: 4.0,
                noise_angle_deg: 180.0 * i as f64 / count.max(1) as f64,
                noise_elongation: if i % 4 == 3 { 0.0 } else { 3.0 },
                channel_correlation: RHO[i % 4],
                channel_gains: GAINS[i % 4],
                gamma: GAMMA[i % 4],
                jpeg_quality: QUALITY[i % 4],
            })
            .collect()
    }

    /// Unit-energy correlation kernel for the profile's noise.
    pub fn noise_kernel(&self) -> Array2<f64> {
        if self.noise_elongation == 0.0 {
            return Array2::from_elem((1, 1), 1.0);
        }
        let r = (2.0 * self.noise_elongation).ceil().max(1.0) as isize;
        let n = (2 * r + 1) as usize;
        let (s, c) = self.noise_angle_deg.to_radians().sin_cos();
        let along = self.noise_elongation;
        let across = 0.5;
        let mut k = Array2::from_shape_fn((n, n), |(i, j)| {
            let y = i as f64 - r as f64;
            let x = j as f64 - r as f64;
            let u = x * c + y * s;
            let v = -x * s + y * c;
            (-(u * u) / (2.0 * along * along) - (v * v) / (2.0 * across * across)).exp()
        });
        let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        k.mapv_inplace(|v| v / norm);
        k
    }
}

fn camera_letter(i: usize) -> String {
    let mut s = String::new();
    let mut i = i;
    loop {
        s.insert(0, (b'a' + (i % 26) as u8) as char);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub images_per_camera: usize,
    pub width: usize,
    pub height: usize,
    /// Extra camera-free renders for fitting the quality model.
    #[serde(default)]
    pub pristine_images: usize,
    pub profiles: Vec<CameraProfile>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            images_per_camera: 100,
            width: 128,
            height: 128,
            pristine_images: 0,
            profiles: CameraProfile::defaults(4),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() < 2 {
            return Err(Error::config("profiles", "at least 2 camera profiles are required"));
        }
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate()?;
            if self.profiles[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::config("profiles", format!("duplicate profile name `{}`", p.name)));
            }
        }
        if self.images_per_camera == 0 {
            return Err(Error::config("images_per_camera", "must be >= 1"));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::config("width", "images must be at least 16x16"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::config("synth", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dead-leaves scene in display units `[0, 1]`, shape `(3, H, W)`.
pub fn render_scene<R: Rng>(height: usize, width: usize, rng: &mut R) -> Array3<f64> {
    let mut canvas = Array3::zeros((3, height, width));
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    for c in 0..3 {
        canvas.index_axis_mut(ndarray::Axis(0), c).fill(base[c]);
    }
    let r_min = 2.0f64;
    let r_max = 0.35 * height.min(width) as f64;
    let area = (height * width) as f64;
    let leaves = (area / 40.0) as usize;
    for _ in 0..leaves {
        // p(r) ~ r^-3 on [r_min, r_max], by inverse transform.
        let u: f64 = rng.random();
        let r = (r_min.powi(-2) - u * (r_min.powi(-2) - r_max.powi(-2))).powf(-0.5);
        let cx = rng.random_range(-r..width as f64 + r);
        let cy = rng.random_range(-r..height as f64 + r);
        let lum: f64 = rng.random_range(0.08..0.92);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
        let amp: f64 = rng.random_range(0.0..0.1);
        let freq: f64 = rng.random_range(0.06..0.4);
        let theta: f64 = rng.random_range(0.0..PI);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let (st, ct) = theta.sin_cos();
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let y1 = ((cy + r + 1.0).ceil().max(0.0) as usize).min(height);
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((cx + r + 1.0).ceil().max(0.0) as usize).min(width);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let cover = (r - d + 0.5).clamp(0.0, 1.0);
                if cover == 0.0 {
                    continue;
                }
                let texture = amp * (2.0 * PI * freq * (px * ct + py * st) + phase).sin();
                for c in 0..3 {
                    let v = (lum + tint[c] + texture).clamp(0.0, 1.0);
                    let old = canvas[[c, y, x]];
                    canvas[[c, y, x]] = old + cover * (v - old);
                }
            }
        }
    }
    let (gx, gy): (f64, f64) = (rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25));
    for ((_, y, x), v) in canvas.indexed_iter_mut() {
        let shade = 1.0 + gx * (x as f64 / width as f64 - 0.5) + gy * (y as f64 / height as f64 - 0.5);
        *v = (*v * shade).clamp(0.0, 1.0);
    }
    canvas
}

/// Per-camera multiplicative sensor pattern, shape `(H, W)`, zero mean.
pub fn sensor_pattern(seed: u64, camera: usize, height: usize, width: usize, strength: f64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 1 << 40 | camera as u64);
    Array2::from_shape_fn((height, width), |_| strength * rng.sample::<f64, _>(StandardNormal))
}

fn correlate_same(plane: &Array2<f64>, kernel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = plane.dim();
    let (kh, kw) = kernel.dim();
    if kh == 1 && kw == 1 {
        return plane * kernel[[0, 0]];
    }
    let (ry, rx) = ((kh / 2) as isize, (kw / 2) as isize);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        for i in 0..kh {
            let yy = (y as isize + i as isize - ry).rem_euclid(h as isize) as usize;
            for j in 0..kw {
                let xx = (x as isize + j as isize - rx).rem_euclid(w as isize) as usize;
                acc += kernel[[i, j]] * plane[[yy, xx]];
            }
        }
        acc
    })
}

/// Renders `scene` through `profile` and returns the 8-bit image before
/// JPEG compression.
pub fn render_camera<R: Rng>(
    scene: &Array3<f64>,
    profile: &CameraProfile,
    pattern: &Array2<f64>,
    rng: &mut R,
) -> RgbImage {
    let (_, h, w) = scene.dim();
    let kernel = profile.noise_kernel();
    let rho = profile.channel_correlation;
    let mut white = || Array2::from_shape_fn((h, w), |_| rng.sample::<f64, _>(StandardNormal));
    let shared = correlate_same(&white(), &kernel);
    let mut out = Array3::<f32>::zeros((3, h, w));
    for c in 0..3 {
        let own = correlate_same(&white(), &kernel);
        for y in 0..h {
            for x in 0..w {
                let lin = scene[[c, y, x]].powf(SCENE_GAMMA) * profile.channel_gains[c] * (1.0 + pattern[[y, x]]);
                let clean = 255.0 * lin.clamp(0.0, 1.0).powf(1.0 / profile.gamma);
                let sd = (profile.shot_noise * clean + profile.read_noise.powi(2)).sqrt();
                let n = rho.sqrt() * shared[[y, x]] + (1.0 - rho).sqrt() * own[[y, x]];
                out[[c, y, x]] = (clean + sd * n) as f32;
            }
        }
    }
    array_to_rgb(&out)
}

fn camera_jpeg(config: &SynthConfig, camera: usize, index: usize, pattern: &Array2<f64>) -> Result<Vec<u8>> {
    let profile = &config.profiles[camera];
    let mut rng = stream_rng(config.seed, ((camera as u64) << 32) | index as u64);
    let scene = render_scene(config.height, config.width, &mut rng);
    let img = render_camera(&scene, profile, pattern, &mut rng);
    encode_jpeg(&img, profile.jpeg_quality)
}

/// Image `index` of camera `camera` exactly as [`generate_corpus`] writes it,
/// decoded to `(3, H, W)`.
pub fn camera_image(config: &SynthConfig, camera: usize, index: usize) -> Result<Array3<f32>> {
    config.validate()?;
    if camera >= config.profiles.len() {
        return Err(Error::config("camera", format!("only {} profiles", config.profiles.len())));
    }
    let pattern = sensor_pattern(config.seed, camera, config.height, config.width, config.profiles[camera].prnu_strength);
    let bytes = camera_jpeg(config, camera, index, &pattern)?;
    Ok(rgb_to_array(&decode_jpeg(&bytes)?))
}

/// Writes `<out>/<profile>/<profile>_<index>.jpg` for every profile and,
/// when `pristine` is given and `pristine_images > 0`, camera-free PNG
/// renders into that directory. Returns the number of camera images written.
pub fn generate_corpus(config: &SynthConfig, out: &Path, pristine: Option<&Path>) -> Result<usize> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let n = config.images_per_camera;
    for (ci, profile) in config.profiles.iter().enumerate() {
        let dir = out.join(&profile.name);
        fs::create_dir_all(&dir)?;
        let pattern = sensor_pattern(config.seed, ci, h, w, profile.prnu_strength);
        let files = map_indexed(n, |i| camera_jpeg(config, ci, i, &pattern));
        for (i, bytes) in files.into_iter().enumerate() {
            fs::write(dir.join(format!("{}_{i:04}.jpg", profile.name)), bytes?)?;
        }
    }
    if let Some(dir) = pristine {
        if config.pristine_images > 0 {
            fs::create_dir_all(dir)?;
            let images = map_indexed(config.pristine_images, |i| {
                let mut rng = stream_rng(config.seed, (1 << 48) | i as u64);
                let scene = render_scene(h, w, &mut rng);
                array_to_rgb(&scene.mapv(|v| (255.0 * v) as f32))
            });
            for (i, img) in images.into_iter().enumerate() {
                img.save_with_format(dir.join(format!("pristine_{i:04}.png")), image::ImageFormat::Png)?;
            }
        }
    }
    Ok(n * config.profiles.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scan_dataset;

    #[test]
    fn letters() {
        assert_eq!(camera_letter(0), "a");
        assert_eq!(camera_letter(25), "z");
        assert_eq!(camera_letter(26), "aa");
    }

    #[test]
    fn kernels_have_unit_energy() {
        for p in CameraProfile::defaults(6) {
            let k = p.noise_kernel();
            assert!((k.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_stays_in_range_and_has_structure() {
        let mut rng = stream_rng(3, 0);
        let s = render_scene(48, 64, &mut rng);
        assert_eq!(s.dim(), (3, 48, 64));
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = s.mean().unwrap();
        let var = s.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(var > 1e-3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig::default();
        cfg.profiles.truncate(1);
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.profiles[1].name = cfg.profiles[0].name.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.profiles[0].jpeg_quality = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SynthConfig {
            images_per_camera: 3,
            ..Default::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SynthConfig::from_toml(&text).unwrap(), cfg);
        assert!(SynthConfig::from_toml("seed = 1").is_err());
    }

    #[test]
    fn corpus_layout_and_determinism() {
        let cfg = SynthConfig {
            images_per_camera: 3,
            width: 32,
            height: 24,
            pristine_images: 2,
            profiles: CameraProfile::defaults(3),
            seed: 11,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(generate_corpus(&cfg, &a.path().join("c"), Some(&a.path().join("p"))).unwrap(), 9);
        generate_corpus(&cfg, &b.path().join("c"), None).unwrap();
        let manifest = scan_dataset(&a.path().join("c")).unwrap();
        assert_eq!(manifest.cameras.len(), 3);
        assert_eq!(manifest.num_images(), 9);
        for cam in &manifest.cameras {
            for img in &cam.images {
                assert_eq!((img.width, img.height), (32, 24));
                let other = b.path().join("c").join(&img.path);
                assert_eq!(fs::read(manifest.absolute(img)).unwrap(), fs::read(other).unwrap());
            }
        }
        assert_eq!(fs::read_dir(a.path().join("p")).unwrap().count(), 2);
        let on_disk = crate::imaging::load_rgb(&a.path().join("c/cam_b/cam_b_0002.jpg")).unwrap();
        assert_eq!(camera_image(&cfg, 1, 2).unwrap(), rgb_to_array(&on_disk));
        assert!(camera_image(&cfg, 3, 0).is_err());
    }
}
