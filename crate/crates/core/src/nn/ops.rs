//! Parameter-free tensor operations shared by the detector and the
//! structure recognizer.

use candle_core::{DType, Device, Tensor, D};

use super::feature::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Directional running-max scans used by corner pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scan {
    /// Each location takes the max over itself and everything below it.
    Top,
    /// Max over itself and everything to its right.
    Left,
    /// Max over itself and everything above it.
    Bottom,
    /// Max over itself and everything to its left.
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum CornerKind {
    TopLeft,
    BottomRight,
}

impl CornerKind {
    pub fn scans(self) -> (Scan, Scan) {
        match self {
            CornerKind::TopLeft => (Scan::Top, Scan::Left),
            CornerKind::BottomRight => (Scan::Bottom, Scan::Right),
        }
    }
}

/// Running max along one spatial axis of a `(N, C, H, W)` tensor, computed
/// with log-step doubling so that backprop stays a chain of `maximum`s.
pub fn directional_max(x: &Tensor, scan: Scan) -> Result<Tensor> {
    let (dim, trailing) = match scan {
        Scan::Top => (2, true),
        Scan::Left => (3, true),
        Scan::Bottom => (2, false),
        Scan::Right => (3, false),
    };
    let n = x.dim(dim)?;
    let mut out = x.clone();
    let mut s = 1;
    while s < n {
        out = if trailing {
            let head = out.narrow(dim, 0, n - s)?.maximum(&out.narrow(dim, s, n - s)?)?;
            Tensor::cat(&[head, out.narrow(dim, n - s, s)?], dim)?
        } else {
            let rest = out.narrow(dim, s, n - s)?.maximum(&out.narrow(dim, 0, n - s)?)?;
            Tensor::cat(&[out.narrow(dim, 0, s)?, rest], dim)?
        };
        s *= 2;
    }
    Ok(out)
}

/// Sum of the two directional scans belonging to a corner kind.
pub fn corner_pool(feature: &FeatureMap, kind: CornerKind) -> Result<FeatureMap> {
    let (a, b) = kind.scans();
    let t = (directional_max(&feature.tensor, a)? + directional_max(&feature.tensor, b)?)?;
    FeatureMap::new(t, feature.stride)
}

/// Separable bilinear weights for one axis of RoI align: `bins x len`,
/// each row averaging `samples` bilinear taps.
fn roi_axis_weights(start: f64, extent: f64, bins: usize, samples: usize, len: usize) -> Vec<f64> {
    let mut w = vec![0.0; bins * len];
    let bin = extent / bins as f64;
    for b in 0..bins {
        for s in 0..samples {
            let mut c = start + (b as f64 + (s as f64 + 0.5) / samples as f64) * bin;
            if c < -1.0 || c > len as f64 {
                continue;
            }
            c = c.clamp(0.0, (len - 1) as f64);
            let lo = c.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            let frac = c - lo as f64;
            w[b * len + lo] += (1.0 - frac) / samples as f64;
            w[b * len + hi] += frac / samples as f64;
        }
    }
    w
}

pub const ROI_SAMPLES: usize = 2;

/// RoI align with 2x2 samples per bin. Boxes are in image pixels and are
/// mapped to feature coordinates by dividing by the stride, using the
/// half-pixel convention (feature index `i` sits at image coordinate
/// `(i + 0.5) * stride`). Returns `(K, C, out, out)`.
pub fn roi_align(feature: &FeatureMap, boxes: &[BBox], out: usize) -> Result<Tensor> {
    let (_, c, h, w) = feature.tensor.dims4()?;
    if boxes.is_empty() {
        return Ok(Tensor::zeros((0, c, out, out), feature.tensor.dtype(), feature.tensor.device())?);
    }
    let s = feature.stride as f64;
    let extent = BBox { x: 0.0, y: 0.0, w: w as f64 * s, h: h as f64 * s };
    let mut ry = Vec::with_capacity(boxes.len() * out * h);
    let mut rx = Vec::with_capacity(boxes.len() * out * w);
    for b in boxes {
        if b.intersection_area(&extent) <= 0.0 {
            return Err(Error::InvalidInput(format!("RoI {b:?} lies outside the feature extent")));
        }
        ry.extend(roi_axis_weights(b.y / s - 0.5, b.h / s, out, ROI_SAMPLES, h));
        rx.extend(roi_axis_weights(b.x / s - 0.5, b.w / s, out, ROI_SAMPLES, w));
    }
    let k = boxes.len();
    let dtype = feature.tensor.dtype();
    let dev = feature.tensor.device();
    let ry = Tensor::from_vec(ry, (k, 1, out, h), dev)?.to_dtype(dtype)?;
    let rx_t = Tensor::from_vec(rx, (k, 1, out, w), dev)?.to_dtype(dtype)?.transpose(2, 3)?;
    Ok(ry.broadcast_matmul(&feature.tensor)?.broadcast_matmul(&rx_t)?)
}

/// Interpolation matrix `dst x src` for bilinear resizing with half-pixel
/// centers (the `align_corners = false` convention).
pub fn bilinear_matrix(src: usize, dst: usize) -> Vec<f64> {
    let mut m = vec![0.0; src * dst];
    let scale = src as f64 / dst as f64;
    for i in 0..dst {
        let c = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (c.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        let frac = if lo == src - 1 { 0.0 } else { c - lo as f64 };
        m[i * src + lo] += 1.0 - frac;
        m[i * src + hi] += frac;
    }
    m
}

/// Differentiable bilinear resize of a `(N, C, H, W)` tensor.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let dev = x.device();
    let dt = x.dtype();
    let uh = Tensor::from_vec(bilinear_matrix(h, out_h), (out_h, h), dev)?.to_dtype(dt)?;
    let uw = Tensor::from_vec(bilinear_matrix(w, out_w), (out_w, w), dev)?.to_dtype(dt)?.t()?;
    Ok(uh.broadcast_matmul(x)?.broadcast_matmul(&uw)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

/// Max over adjacent pairs along one axis (a 1x2 or 2x1 pool with equal
/// kernel and stride). Odd extents are padded by replicating the last slice.
pub fn pair_max_pool(x: &Tensor, axis: Axis) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    match axis {
        Axis::Width => {
            let x = if w % 2 == 1 { x.pad_with_same(3, 0, 1)? } else { x.clone() };
            let w2 = x.dim(3)? / 2;
            Ok(x.reshape((n, c, h, w2, 2))?.max(D::Minus1)?)
        }
        Axis::Height => {
            let x = if h % 2 == 1 { x.pad_with_same(2, 0, 1)? } else { x.clone() };
            let h2 = x.dim(2)? / 2;
            Ok(x.reshape((n, c, h2, 2, w))?.max(3)?)
        }
    }
}

pub fn constant(values: Vec<f64>, shape: impl Into<candle_core::Shape>, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(values: Vec<f64>, shape: (usize, usize, usize, usize)) -> Tensor {
        Tensor::from_vec(values, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn left_pool_row_example() {
        let x = t(vec![1., 5., 2.], (1, 1, 1, 3));
        let y = directional_max(&x, Scan::Left).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5., 5., 2.]);
        let y = directional_max(&x, Scan::Right).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1., 5., 5.]);
    }

    #[test]
    fn constant_map_is_fixed_point() {
        let x = t(vec![3.0; 12], (1, 1, 3, 4));
        for s in [Scan::Top, Scan::Left, Scan::Bottom, Scan::Right] {
            let y = directional_max(&x, s).unwrap();
            assert!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&v| v == 3.0));
        }
        let fm = FeatureMap::new(x, 4).unwrap();
        let p = corner_pool(&fm, CornerKind::TopLeft).unwrap();
        assert!(p.tensor.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn pair_pool_halves_axis() {
        let x = t((0..24).map(f64::from).collect(), (1, 1, 4, 6));
        assert_eq!(pair_max_pool(&x, Axis::Width).unwrap().dims(), &[1, 1, 4, 3]);
        assert_eq!(pair_max_pool(&x, Axis::Height).unwrap().dims(), &[1, 1, 2, 6]);
        let odd = t((0..15).map(f64::from).collect(), (1, 1, 3, 5));
        assert_eq!(pair_max_pool(&odd, Axis::Width).unwrap().dims(), &[1, 1, 3, 3]);
        let y = pair_max_pool(&x, Axis::Width).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap()[..3], [1., 3., 5.]);
    }

    #[test]
    fn bilinear_rows_sum_to_one() {
        for (s, d) in [(4, 16), (8, 32), (5, 7), (16, 16)] {
            let m = bilinear_matrix(s, d);
            for i in 0..d {
                let sum: f64 = m[i * s..(i + 1) * s].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // identity resize
        let m = bilinear_matrix(6, 6);
        for i in 0..6 {
            assert_eq!(m[i * 6 + i], 1.0);
        }
    }

    #[test]
    fn roi_rejects_outside_box() {
        let fm = FeatureMap::new(t(vec![1.0; 16], (1, 1, 4, 4)), 16).unwrap();
        let outside = BBox::new(100.0, 100.0, 10.0, 10.0).unwrap();
        assert!(roi_align(&fm, &[outside], 7).is_err());
        let inside = BBox::new(3.0, 5.0, 40.0, 30.0).unwrap();
        let r = roi_align(&fm, &[inside], 7).unwrap();
        assert_eq!(r.dims(), &[1, 1, 7, 7]);
        for v in r.flatten_all().unwrap().to_vec1::<f64>().unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
