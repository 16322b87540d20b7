//! Sparse linear maps ("plans") between tensor layouts.
//!
//! A [`LinearPlan`] stores, for every output element, the list of input
//! elements it reads and the fixed weight on each read. Padding, pooling,
//! broadcasting, im2col, translation, mirroring and bilinear resampling are
//! all instances of this one primitive, which makes them exactly linear — so
//! their derivative to any order is the plan itself (or its transpose).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A fixed-coefficient linear map `in_shape -> out_shape`.
#[derive(Debug)]
pub struct LinearPlan {
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    /// `offsets[i]..offsets[i+1]` indexes the taps of output element `i`.
    offsets: Vec<usize>,
    taps: Vec<(usize, f64)>,
    transpose: std::cell::OnceCell<Rc<LinearPlan>>,
}

impl LinearPlan {
    fn from_taps(
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        per_out: impl Iterator<Item = Vec<(usize, f64)>>,
    ) -> Self {
        let out_numel: usize = out_shape.iter().product();
        let mut offsets = Vec::with_capacity(out_numel + 1);
        let mut taps = Vec::new();
        offsets.push(0);
        for row in per_out {
            taps.extend(row);
            offsets.push(taps.len());
        }
        assert_eq!(offsets.len(), out_numel + 1, "plan rows must cover every output element");
        Self { in_shape, out_shape, offsets, taps, transpose: std::cell::OnceCell::new() }
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    /// Applies the map to a value with shape `in_shape`.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() != self.in_shape.as_slice() {
            return Err(Error::shape(
                "plan",
                format!("expected {:?}, got {:?}", self.in_shape, input.shape()),
            ));
        }
        let src = input.data();
        let out_numel = self.offsets.len() - 1;
        let mut out = vec![0.0; out_numel];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(idx, w) in &self.taps[self.offsets[i]..self.offsets[i + 1]] {
                acc += w * src[idx];
            }
            *o = acc;
        }
        Tensor::new(self.out_shape.clone(), out)
    }

    /// The adjoint map `out_shape -> in_shape`; cached after first use.
    pub fn transposed(self: &Rc<Self>) -> Rc<LinearPlan> {
        self.transpose
            .get_or_init(|| {
                let in_numel: usize = self.in_shape.iter().product();
                let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); in_numel];
                for out_idx in 0..self.offsets.len() - 1 {
                    for &(in_idx, w) in &self.taps[self.offsets[out_idx]..self.offsets[out_idx + 1]] {
                        rows[in_idx].push((out_idx, w));
                    }
                }
                Rc::new(LinearPlan::from_taps(
                    self.out_shape.clone(),
                    self.in_shape.clone(),
                    rows.into_iter(),
                ))
            })
            .clone()
    }
}

/// Cache keys for the shape-parameterized plan constructors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PlanKey {
    FillFromScalar(Vec<usize>),
    SumCols { rows: usize, cols: usize },
    BcastRows { rows: usize, cols: usize },
    BcastCols { rows: usize, cols: usize },
    BcastChannel { n: usize, c: usize, inner: usize },
    Im2col { n: usize, c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize },
    AvgPool { n: usize, c: usize, h: usize, w: usize, k: usize },
    ChannelsToImages { cout: usize, n: usize, oh: usize, ow: usize },
    FlipH { n: usize, c: usize, h: usize, w: usize },
    Shift { n: usize, c: usize, h: usize, w: usize, dy: i64, dx: i64 },
    Scale { n: usize, c: usize, h: usize, w: usize, factor_bits: u64 },
    PickPerRow { rows: usize, cols: usize, picks: Vec<usize> },
}

thread_local! {
    static PLAN_CACHE: RefCell<HashMap<PlanKey, Rc<LinearPlan>>> = RefCell::new(HashMap::new());
}

fn cached(key: PlanKey, build: impl FnOnce() -> LinearPlan) -> Rc<LinearPlan> {
    PLAN_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        cache.entry(key).or_insert_with(|| Rc::new(build())).clone()
    })
}

/// `[] -> shape`: every output element reads the single scalar input.
pub fn fill_from_scalar(shape: &[usize]) -> Rc<LinearPlan> {
    let numel: usize = shape.iter().product();
    cached(PlanKey::FillFromScalar(shape.to_vec()), || {
        LinearPlan::from_taps(
            Vec::new(),
            shape.to_vec(),
            (0..numel).map(|_| vec![(0, 1.0)]),
        )
    })
}

/// `[rows, cols] -> [rows]`: sums each row.
pub fn sum_cols(rows: usize, cols: usize) -> Rc<LinearPlan> {
    cached(PlanKey::SumCols { rows, cols }, || {
        LinearPlan::from_taps(
            vec![rows, cols],
            vec![rows],
            (0..rows).map(|r| (0..cols).map(|c| (r * cols + c, 1.0)).collect()),
        )
    })
}

/// `[cols] -> [rows, cols]`: repeats a row vector down the rows.
pub fn bcast_rows(rows: usize, cols: usize) -> Rc<LinearPlan> {
    cached(PlanKey::BcastRows { rows, cols }, || {
        LinearPlan::from_taps(
            vec![cols],
            vec![rows, cols],
            (0..rows * cols).map(|i| vec![(i % cols, 1.0)]),
        )
    })
}

/// `[rows] -> [rows, cols]`: repeats a column vector across the columns.
pub fn bcast_cols(rows: usize, cols: usize) -> Rc<LinearPlan> {
    cached(PlanKey::BcastCols { rows, cols }, || {
        LinearPlan::from_taps(
            vec![rows],
            vec![rows, cols],
            (0..rows * cols).map(|i| vec![(i / cols, 1.0)]),
        )
    })
}

/// `[c] -> [n·c, inner]`: repeats a per-channel vector over samples and positions.
pub fn bcast_channel(n: usize, c: usize, inner: usize) -> Rc<LinearPlan> {
    cached(PlanKey::BcastChannel { n, c, inner }, || {
        LinearPlan::from_taps(
            vec![c],
            vec![n * c, inner],
            (0..n * c * inner).map(|i| vec![((i / inner) % c, 1.0)]),
        )
    })
}

/// `[n,c,h,w] -> [c·kh·kw, n·oh·ow]` patch extraction with implicit zero padding.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Rc<LinearPlan> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    cached(PlanKey::Im2col { n, c, h, w, kh, kw, stride, pad }, || {
        let mut rows = Vec::with_capacity(c * kh * kw * n * oh * ow);
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    for ni in 0..n {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let iy = (oy * stride + ky) as i64 - pad as i64;
                                let ix = (ox * stride + kx) as i64 - pad as i64;
                                let mut taps = Vec::new();
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    let idx = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                    taps.push((idx, 1.0));
                                }
                                rows.push(taps);
                            }
                        }
                    }
                }
            }
        }
        LinearPlan::from_taps(vec![n, c, h, w], vec![c * kh * kw, n * oh * ow], rows.into_iter())
    })
}

/// `[cout, n·oh·ow] -> [n, cout, oh, ow]`: regroups matmul output into images.
pub fn channels_to_images(cout: usize, n: usize, oh: usize, ow: usize) -> Rc<LinearPlan> {
    cached(PlanKey::ChannelsToImages { cout, n, oh, ow }, || {
        let hw = oh * ow;
        let mut rows = Vec::with_capacity(n * cout * hw);
        for ni in 0..n {
            for co in 0..cout {
                for p in 0..hw {
                    rows.push(vec![(co * (n * hw) + ni * hw + p, 1.0)]);
                }
            }
        }
        LinearPlan::from_taps(vec![cout, n * oh * ow], vec![n, cout, oh, ow], rows.into_iter())
    })
}

/// `[n,c,h,w] -> [n,c,h/k,w/k]` average pooling with a k×k window, stride k.
pub fn avg_pool(n: usize, c: usize, h: usize, w: usize, k: usize) -> Rc<LinearPlan> {
    assert!(h.is_multiple_of(k) && w.is_multiple_of(k), "pooling requires spatial dims divisible by {k}");
    cached(PlanKey::AvgPool { n, c, h, w, k }, || {
        let (oh, ow) = (h / k, w / k);
        let inv = 1.0 / (k * k) as f64;
        let mut rows = Vec::with_capacity(n * c * oh * ow);
        for img in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut taps = Vec::with_capacity(k * k);
                    for dy in 0..k {
                        for dx in 0..k {
                            taps.push((img * h * w + (oy * k + dy) * w + (ox * k + dx), inv));
                        }
                    }
                    rows.push(taps);
                }
            }
        }
        LinearPlan::from_taps(vec![n, c, h, w], vec![n, c, oh, ow], rows.into_iter())
    })
}

/// Horizontal mirror of every image in the batch.
pub fn flip_h(n: usize, c: usize, h: usize, w: usize) -> Rc<LinearPlan> {
    cached(PlanKey::FlipH { n, c, h, w }, || {
        let mut rows = Vec::with_capacity(n * c * h * w);
        for img in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    rows.push(vec![(img * h * w + y * w + (w - 1 - x), 1.0)]);
                }
            }
        }
        LinearPlan::from_taps(vec![n, c, h, w], vec![n, c, h, w], rows.into_iter())
    })
}

/// Integer translation by (dy, dx) with zero fill outside the frame.
pub fn shift2d(n: usize, c: usize, h: usize, w: usize, dy: i64, dx: i64) -> Rc<LinearPlan> {
    cached(PlanKey::Shift { n, c, h, w, dy, dx }, || {
        let mut rows = Vec::with_capacity(n * c * h * w);
        for img in 0..n * c {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let (sy, sx) = (y - dy, x - dx);
                    let mut taps = Vec::new();
                    if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        taps.push((img * h * w + (sy as usize) * w + sx as usize, 1.0));
                    }
                    rows.push(taps);
                }
            }
        }
        LinearPlan::from_taps(vec![n, c, h, w], vec![n, c, h, w], rows.into_iter())
    })
}

/// Bilinear zoom about the image center; `factor > 1` magnifies, `< 1` shrinks
/// with a zero border. Output grid equals input grid.
pub fn scale_bilinear(n: usize, c: usize, h: usize, w: usize, factor: f64) -> Rc<LinearPlan> {
    assert!(factor > 0.0, "scale factor must be positive");
    cached(
        PlanKey::Scale { n, c, h, w, factor_bits: factor.to_bits() },
        || {
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let mut rows = Vec::with_capacity(n * c * h * w);
            for img in 0..n * c {
                for y in 0..h {
                    for x in 0..w {
                        let sy = cy + (y as f64 - cy) / factor;
                        let sx = cx + (x as f64 - cx) / factor;
                        let (y0, x0) = (sy.floor(), sx.floor());
                        let (fy, fx) = (sy - y0, sx - x0);
                        let mut taps = Vec::new();
                        for (oy, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
                            for (ox, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
                                let weight = wy * wx;
                                if weight == 0.0 {
                                    continue;
                                }
                                if oy >= 0.0 && oy < h as f64 && ox >= 0.0 && ox < w as f64 {
                                    let idx = img * h * w + (oy as usize) * w + ox as usize;
                                    taps.push((idx, weight));
                                }
                            }
                        }
                        rows.push(taps);
                    }
                }
            }
            LinearPlan::from_taps(vec![n, c, h, w], vec![n, c, h, w], rows.into_iter())
        },
    )
}

/// `[rows, cols] -> [rows]`: selects `picks[r]` from each row (class pick).
pub fn pick_per_row(rows: usize, cols: usize, picks: &[usize]) -> Rc<LinearPlan> {
    assert_eq!(picks.len(), rows, "one pick per row");
    assert!(picks.iter().all(|&p| p < cols), "pick out of range");
    cached(
        PlanKey::PickPerRow { rows, cols, picks: picks.to_vec() },
        || {
            LinearPlan::from_taps(
                vec![rows, cols],
                vec![rows],
                picks.iter().enumerate().map(|(r, &p)| vec![(r * cols + p, 1.0)]),
            )
        },
    )
}
