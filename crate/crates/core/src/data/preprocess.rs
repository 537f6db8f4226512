use super::LabeledDataset;
use crate::error::Result;
use crate::tensor::Tensor;

/// Square target size; output pixels are clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreprocessSpec {
    pub target_size: usize,
}

/// Source coordinate and blend weight for destination index `dst`
/// (pixel centers aligned, edges clamped).
fn sample_axis(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, (src - lo as f64) as f32)
}

/// Bilinear resize of a `c x H x W` image to `c x out_h x out_w`.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let rows: Vec<_> = (0..out_h).map(|y| sample_axis(y, h, out_h)).collect();
    let cols: Vec<_> = (0..out_w).map(|x| sample_axis(x, w, out_w)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for &(x0, x1, fx) in &cols {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn preprocess(ds: &LabeledDataset, spec: PreprocessSpec) -> Result<LabeledDataset> {
    let images = ds
        .images()
        .iter()
        .map(|img| {
            resize_bilinear(img, spec.target_size, spec.target_size)
                .map(|t| t.map(|v| v.clamp(-1.0, 1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(images, ds.labels().to_vec())
}
