//! Skin-tone augmentation: a soft skin mask around the forehead tone and
//! per-channel histogram matching toward a reference albedo.
//!
//! The blend writes the matched tone into texels *close* to the forehead
//! colour. Read literally, the distance itself would be the blend weight and
//! recolour the non-skin texels instead; we invert and smooth it.

use crate::error::{Error, Result};

const BINS: usize = 256;

/// Axis-aligned rectangle in texture coordinates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UvRect {
    pub u0: f64,
    pub v0: f64,
    pub u1: f64,
    pub v1: f64,
}

impl UvRect {
    /// Forehead patch of the unwrap used by the synthetic models.
    pub const FOREHEAD: UvRect = UvRect {
        u0: 0.44,
        v0: 0.33,
        u1: 0.56,
        v1: 0.38,
    };

    fn validate(&self) -> Result<()> {
        let ok = [self.u0, self.v0, self.u1, self.v1].iter().all(|c| (0.0..=1.0).contains(c))
            && self.u0 < self.u1
            && self.v0 < self.v1;
        if ok {
            Ok(())
        } else {
            Err(Error::contract("skin_mask", format!("bad rectangle {self:?}")))
        }
    }

    /// Texel indices whose centres fall inside the rectangle.
    pub fn texels(&self, resolution: usize) -> Vec<usize> {
        let r = resolution as f64;
        let mut out = Vec::new();
        for y in 0..resolution {
            let v = (y as f64 + 0.5) / r;
            if v < self.v0 || v > self.v1 {
                continue;
            }
            for x in 0..resolution {
                let u = (x as f64 + 0.5) / r;
                if u >= self.u0 && u <= self.u1 {
                    out.push(y * resolution + x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskParams {
    pub d_lo: f64,
    pub d_hi: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams { d_lo: 0.15, d_hi: 0.40 }
    }
}

fn smoothstep(x: f64, lo: f64, hi: f64) -> f64 {
    let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn resolution_of(albedo: &[f64], op: &'static str) -> Result<usize> {
    let r = ((albedo.len() / 3) as f64).sqrt().round() as usize;
    if r == 0 || 3 * r * r != albedo.len() {
        return Err(Error::contract(op, format!("{} values is not a 3 x R x R albedo", albedo.len())));
    }
    Ok(r)
}

/// Mean colour over the texels of `rect`.
pub fn region_mean(albedo: &[f64], rect: &UvRect) -> Result<[f64; 3]> {
    let r = resolution_of(albedo, "region_mean")?;
    rect.validate()?;
    let texels = rect.texels(r);
    if texels.is_empty() {
        return Err(Error::contract("region_mean", format!("{rect:?} covers no texel at {r}x{r}")));
    }
    let n = r * r;
    let mut m = [0.0; 3];
    for c in 0..3 {
        m[c] = texels.iter().map(|&i| albedo[c * n + i]).sum::<f64>() / texels.len() as f64;
    }
    Ok(m)
}

/// `R x R` mask, near 1 on texels whose colour is close to the forehead mean.
pub fn skin_mask(albedo: &[f64], rect: &UvRect, params: &MaskParams) -> Result<Vec<f64>> {
    if !(params.d_lo < params.d_hi) {
        return Err(Error::contract("skin_mask", "d_lo must be below d_hi"));
    }
    let mean = region_mean(albedo, rect)?;
    let n = albedo.len() / 3;
    Ok((0..n)
        .map(|i| {
            let d = (0..3).map(|c| (albedo[c * n + i] - mean[c]).powi(2)).sum::<f64>().sqrt();
            1.0 - smoothstep(d, params.d_lo, params.d_hi)
        })
        .collect())
}

fn bin_of(v: f64) -> usize {
    ((v * BINS as f64) as usize).min(BINS - 1)
}

/// Target-side bin counts, cumulative counts and per-bin value ranges.
struct Histogram {
    count: [usize; BINS],
    before: [usize; BINS],
    lo: [f64; BINS],
    hi: [f64; BINS],
}

impl Histogram {
    fn new(values: &[f64]) -> Self {
        let mut h = Histogram {
            count: [0; BINS],
            before: [0; BINS],
            lo: [f64::INFINITY; BINS],
            hi: [f64::NEG_INFINITY; BINS],
        };
        for &v in values {
            let b = bin_of(v);
            h.count[b] += 1;
            h.lo[b] = h.lo[b].min(v);
            h.hi[b] = h.hi[b].max(v);
        }
        let mut acc = 0;
        for b in 0..BINS {
            h.before[b] = acc;
            acc += h.count[b];
        }
        h
    }

    /// Value at continuous sample position `p` in [0, n - 1], linear
    /// between the extremes of the bin holding that position.
    fn quantile(&self, p: f64) -> f64 {
        let mut last = 0;
        for b in 0..BINS {
            let count = self.count[b];
            if count == 0 {
                continue;
            }
            last = b;
            if p < (self.before[b] + count) as f64 - 0.5 {
                if count == 1 {
                    return self.lo[b];
                }
                let frac = ((p - self.before[b] as f64) / (count - 1) as f64).clamp(0.0, 1.0);
                return self.lo[b] + frac * (self.hi[b] - self.lo[b]);
            }
        }
        self.hi[last]
    }
}

fn check_unit(values: &[f64], op: &'static str) -> Result<()> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::contract(op, "values outside [0, 1]"));
    }
    Ok(())
}

/// Per-channel CDF matching of `source` onto `target` (both `3 x R x R`,
/// resolutions may differ).
pub fn histogram_match(source: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let rs = resolution_of(source, "histogram_match")?;
    let rt = resolution_of(target, "histogram_match")?;
    check_unit(source, "histogram_match")?;
    check_unit(target, "histogram_match")?;
    let (ns, nt) = (rs * rs, rt * rt);
    let mut out = vec![0.0; source.len()];
    for c in 0..3 {
        let src = &source[c * ns..(c + 1) * ns];
        let ht = Histogram::new(&target[c * nt..(c + 1) * nt]);
        // Ties are broken by texel order so equal inputs spread over the
        // target's quantiles instead of collapsing onto one value.
        let mut order: Vec<usize> = (0..ns).collect();
        order.sort_by(|&a, &b| src[a].total_cmp(&src[b]).then(a.cmp(&b)));
        let scale = nt as f64 / ns as f64;
        let dst = &mut out[c * ns..(c + 1) * ns];
        for (rank, &i) in order.iter().enumerate() {
            let p = (rank as f64 + 0.5) * scale - 0.5;
            dst[i] = ht.quantile(p).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// `M * matched + (1 - M) * albedo`, per texel over all three channels.
pub fn blend_albedo(albedo: &[f64], matched: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
    let n = mask.len();
    if albedo.len() != 3 * n || matched.len() != 3 * n {
        return Err(Error::contract("blend_albedo", "mask and albedo sizes differ"));
    }
    Ok((0..3 * n)
        .map(|i| {
            let m = mask[i % n];
            m * matched[i] + (1.0 - m) * albedo[i]
        })
        .collect())
}

/// Reference albedo for one bin of the 10-step Monk skin-tone scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinToneTarget {
    pub albedo: Vec<f64>,
    pub mst_label: u8,
}

impl SkinToneTarget {
    pub fn new(albedo: Vec<f64>, mst_label: u8) -> Result<Self> {
        resolution_of(&albedo, "skin tone target")?;
        check_unit(&albedo, "skin tone target")?;
        if !(1..=10).contains(&mst_label) {
            return Err(Error::contract("skin tone target", format!("label {mst_label} outside 1..=10")));
        }
        Ok(SkinToneTarget { albedo, mst_label })
    }
}

pub fn augment_albedo(
    albedo: &[f64],
    target: &SkinToneTarget,
    rect: &UvRect,
    params: &MaskParams,
) -> Result<Vec<f64>> {
    let mask = skin_mask(albedo, rect, params)?;
    let matched = histogram_match(albedo, &target.albedo)?;
    blend_albedo(albedo, &matched, &mask)
}
