//! Pixel embedding: pad, a stride-16 patch convolution, GELU, an additive
//! 2D sinusoidal table, then a stride-2 convolution. Each output token covers
//! one 32×32 pixel region.

use rand::Rng;

use crate::image::Image;
use crate::numerics::{conv2d, gelu, Bindings, ParamId, ParamStore, Tape, Tensor, Var};
use crate::serializer::PATCH_SIZE;
use crate::{Error, Result};

pub const CONV1_STRIDE: usize = 16;
pub const CONV2_STRIDE: usize = 2;
const PE_BASE: f64 = 1e4;

/// Zero-pads a `[C×H×W]` tensor on the bottom and right up to multiples of
/// `m`.
pub fn pad_to_multiple(img: &Tensor, m: usize) -> Tensor {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for y in 0..h {
            let src = &img.data()[ch * h * w + y * w..ch * h * w + (y + 1) * w];
            out.data_mut()[ch * ph * pw + y * pw..ch * ph * pw + y * pw + w].copy_from_slice(src);
        }
    }
    out
}

/// Normalised, padded `[3×H'×W']` input for an image.
pub fn prepare(img: &Image) -> Tensor {
    pad_to_multiple(&img.to_tensor(), PATCH_SIZE)
}

/// Additive 2D sinusoidal table `[d_mid × rows × cols]`.
///
/// The first `d_mid/2` channels encode the row and the rest the column; in
/// each half, channel `2c` is `sin(pos·ω_c)` and `2c+1` is `cos(pos·ω_c)` with
/// `ω_c = 10000^(−2c/(d_mid/2))`.
pub fn positional_encoding(rows: usize, cols: usize, d_mid: usize) -> Result<Tensor> {
    if d_mid == 0 || !d_mid.is_multiple_of(4) {
        return Err(Error::Config(format!("d_mid must be a positive multiple of 4, got {d_mid}")));
    }
    let half = d_mid / 2;
    let mut out = Tensor::zeros(&[d_mid, rows, cols]);
    let plane = rows * cols;
    for c in 0..half / 2 {
        let omega = PE_BASE.powf(-2.0 * c as f64 / half as f64);
        for r in 0..rows {
            for k in 0..cols {
                let p = r * cols + k;
                let (ra, ca) = (r as f64 * omega, k as f64 * omega);
                let d = out.data_mut();
                d[(2 * c) * plane + p] = ra.sin();
                d[(2 * c + 1) * plane + p] = ra.cos();
                d[(half + 2 * c) * plane + p] = ca.sin();
                d[(half + 2 * c + 1) * plane + p] = ca.cos();
            }
        }
    }
    Ok(out)
}

/// Parameter handles of the embedding.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub d_mid: usize,
    pub d_model: usize,
}

/// Borrowed weights for the plain (tape-free) path.
pub struct PatchEmbedParams<'a> {
    pub conv1_w: &'a Tensor,
    pub conv1_b: &'a Tensor,
    pub conv2_w: &'a Tensor,
    pub conv2_b: &'a Tensor,
}

impl PatchEmbed {
    /// Registers the four parameters under `patch_embed.*`.
    pub fn register(store: &mut ParamStore, d_mid: usize, d_model: usize, init: &mut impl FnMut(&[usize]) -> Tensor) -> Self {
        let k1 = CONV1_STRIDE;
        let k2 = CONV2_STRIDE;
        Self {
            conv1_w: store.add("patch_embed.conv1.weight", init(&[d_mid, 3, k1, k1])),
            conv1_b: store.add("patch_embed.conv1.bias", Tensor::zeros(&[d_mid])),
            conv2_w: store.add("patch_embed.conv2.weight", init(&[d_model, d_mid, k2, k2])),
            conv2_b: store.add("patch_embed.conv2.bias", Tensor::zeros(&[d_model])),
            d_mid,
            d_model,
        }
    }

    pub fn params<'a>(&self, store: &'a ParamStore) -> PatchEmbedParams<'a> {
        PatchEmbedParams {
            conv1_w: store.value(self.conv1_w),
            conv1_b: store.value(self.conv1_b),
            conv2_w: store.value(self.conv2_w),
            conv2_b: store.value(self.conv2_b),
        }
    }

    /// Tape version of [`embed_image`] over a padded input.
    pub fn embed_tape(&self, tape: &mut Tape, vars: &Bindings, padded: &Tensor) -> Result<Var> {
        let (h, w) = (padded.shape()[1], padded.shape()[2]);
        let pe = positional_encoding(h / CONV1_STRIDE, w / CONV1_STRIDE, self.d_mid)?;
        let x = tape.constant(padded.clone());
        let f = tape.conv2d(x, vars.get(self.conv1_w), vars.get(self.conv1_b), CONV1_STRIDE)?;
        let f = tape.gelu(f)?;
        let pe = tape.constant(pe);
        let f = tape.add(f, pe)?;
        let y = tape.conv2d(f, vars.get(self.conv2_w), vars.get(self.conv2_b), CONV2_STRIDE)?;
        tape.chw_to_tokens(y)
    }
}

/// Embeds a padded `[3×H×W]` image into `[(H/32)·(W/32) × d_model]` token
/// rows, row-major over the visual grid.
pub fn embed_image(padded: &Tensor, params: &PatchEmbedParams<'_>) -> Result<Tensor> {
    padded.expect_rank(3, "embed_image")?;
    let (h, w) = (padded.shape()[1], padded.shape()[2]);
    if h % PATCH_SIZE != 0 || w % PATCH_SIZE != 0 {
        return Err(Error::shape("embed_image", format!("{h}x{w} is not padded to {PATCH_SIZE}")));
    }
    let d_mid = params.conv1_w.shape()[0];
    let f = conv2d(padded, params.conv1_w, params.conv1_b, CONV1_STRIDE)?;
    let mut f = gelu(&f);
    f.add_assign(&positional_encoding(h / CONV1_STRIDE, w / CONV1_STRIDE, d_mid)?);
    let y = conv2d(&f, params.conv2_w, params.conv2_b, CONV2_STRIDE)?;
    let (c, p) = (y.shape()[0], y.shape()[1] * y.shape()[2]);
    let out = Tensor::new(vec![c, p], y.into_data())?.transpose();
    out.ensure_finite("embed_image")?;
    Ok(out)
}

/// Truncated-normal initialiser (±2σ), rounded to 32-bit storage.
pub fn truncated_normal(rng: &mut impl Rng, std: f64) -> impl FnMut(&[usize]) -> Tensor + '_ {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    move |shape: &[usize]| {
        Tensor::from_fn(shape, |_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break (z * std) as f32 as f64;
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Image, BLACK};
    use crate::serializer::grid_dims;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d_mid: usize, d_model: usize, seed: u64) -> (ParamStore, PatchEmbed) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = truncated_normal(&mut rng, 0.05);
        let mut store = ParamStore::new();
        let pe = PatchEmbed::register(&mut store, d_mid, d_model, &mut init);
        (store, pe)
    }

    #[test]
    fn padding_cases() {
        let t = Image::filled(64, 64, BLACK).to_tensor();
        assert_eq!(pad_to_multiple(&t, 32), t);
        let t = Image::filled(31, 33, [255, 255, 255]).to_tensor();
        let p = pad_to_multiple(&t, 32);
        assert_eq!(p.shape(), &[3, 64, 32]);
        assert_eq!(p.data()[0], 1.0);
        assert_eq!(p.data()[33 * 32], 0.0); // row 33 is padding
        assert_eq!(p.data()[31], 0.0); // column 31 is padding
    }

    #[test]
    fn pe_reference_values() {
        let pe = positional_encoding(3, 4, 8).unwrap();
        let plane = 12;
        // (0,0): sin 0, cos 1
        for ch in 0..8 {
            let want = if ch % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.data()[ch * plane], want);
        }
        // channel 0 at (r, c) is sin(r)
        assert_eq!(pe.data()[2 * 4 + 3], (2.0f64).sin());
        assert_eq!(positional_encoding(3, 4, 8).unwrap(), pe);
        assert!(positional_encoding(2, 2, 6).is_err());
    }

    #[test]
    fn token_count_matches_grid() {
        let (store, pe) = setup(8, 16, 1);
        for (h, w) in [(64, 64), (33, 31), (32, 97), (1, 1)] {
            let t = prepare(&Image::filled(w, h, BLACK));
            let out = embed_image(&t, &pe.params(&store)).unwrap();
            let (gh, gw) = grid_dims(h, w);
            assert_eq!(out.shape(), &[gh * gw, 16]);
        }
    }

    #[test]
    fn zero_image_reduces_to_conv2_of_gelu_pe() {
        let (store, pe) = setup(8, 16, 2);
        let zero = Tensor::zeros(&[3, 64, 64]);
        let out = embed_image(&zero, &pe.params(&store)).unwrap();
        let p = pe.params(&store);
        let mut f = Tensor::zeros(&[8, 4, 4]);
        for v in f.data_mut() {
            *v = super::super::numerics::kernels::gelu_scalar(0.0);
        }
        f.add_assign(&positional_encoding(4, 4, 8).unwrap());
        let y = conv2d(&f, p.conv2_w, p.conv2_b, 2).unwrap();
        let want = Tensor::new(vec![16, 4], y.into_data()).unwrap().transpose();
        assert_eq!(out, want);
    }

    #[test]
    fn translation_by_whole_patches_permutes_conv1_features() {
        let (store, pe) = setup(8, 16, 3);
        let mut a = Image::filled(64, 64, BLACK);
        a.fill_rect(3, 5, 10, 7, [200, 30, 90]);
        let mut b = Image::filled(64, 64, BLACK);
        b.fill_rect(35, 37, 10, 7, [200, 30, 90]);
        let p = pe.params(&store);
        let fa = conv2d(&prepare(&a), p.conv1_w, p.conv1_b, 16).unwrap();
        let fb = conv2d(&prepare(&b), p.conv1_w, p.conv1_b, 16).unwrap();
        let cols = |t: &Tensor| {
            let mut v: Vec<Vec<u64>> = (0..16)
                .map(|pos| (0..8).map(|c| t.data()[c * 16 + pos].to_bits()).collect())
                .collect();
            v.sort();
            v
        };
        assert_eq!(cols(&fa), cols(&fb));
        // the positional table then separates the two
        let ea = embed_image(&prepare(&a), &p).unwrap();
        let eb = embed_image(&prepare(&b), &p).unwrap();
        assert_ne!(ea.row(0), eb.row(3));
    }

    #[test]
    fn tape_path_matches_plain_path() {
        let (store, pe) = setup(8, 16, 4);
        let mut img = Image::filled(50, 70, BLACK);
        img.fill_rect(10, 10, 20, 30, [10, 250, 60]);
        let t = prepare(&img);
        let mut tape = Tape::new();
        let vars = tape.bind_all(&store);
        let v = pe.embed_tape(&mut tape, &vars, &t).unwrap();
        assert_eq!(tape.value(v), &embed_image(&t, &pe.params(&store)).unwrap());
    }
}
