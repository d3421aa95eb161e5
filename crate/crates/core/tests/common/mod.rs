//! Independent reference implementations used as test oracles. Written
//! straight from the definitions, without sharing code with the library.
#![allow(dead_code)]

use rand::Rng;
use tarspot::{BinaryMask, InstanceSet};

pub fn random_mask(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    let bits = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

/// Element members as (dx, dy) offsets from the center of a `w`×`h` grid.
pub fn element_offsets(w: usize, h: usize, bits: &[bool]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] {
                out.push((x as i64 - (w / 2) as i64, y as i64 - (h / 2) as i64));
            }
        }
    }
    out
}

fn at(m: &BinaryMask, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && (x as usize) < m.width() && (y as usize) < m.height() && m.get(x as usize, y as usize)
}

/// p survives iff every element member lands on a set pixel; outside is unset.
pub fn naive_erode(m: &BinaryMask, se: &[(i64, i64)]) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        se.iter().all(|&(dx, dy)| at(m, x as i64 + dx, y as i64 + dy))
    })
}

/// p is set iff some set pixel q has p = q + o for a member o.
pub fn naive_dilate(m: &BinaryMask, se: &[(i64, i64)]) -> BinaryMask {
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        se.iter().any(|&(dx, dy)| at(m, x as i64 - dx, y as i64 - dy))
    })
}

pub fn naive_open(m: &BinaryMask, se: &[(i64, i64)]) -> BinaryMask {
    naive_dilate(&naive_erode(m, se), se)
}

/// Closing on the unbounded plane with everything outside the raster unset:
/// the dilation is evaluated wherever the erosion needs it, inside or not.
pub fn naive_close(m: &BinaryMask, se: &[(i64, i64)]) -> BinaryMask {
    let dilated_at = |x: i64, y: i64| se.iter().any(|&(dx, dy)| at(m, x - dx, y - dy));
    BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        se.iter().all(|&(dx, dy)| dilated_at(x as i64 + dx, y as i64 + dy))
    })
}

/// Flood-fill labelling; labels follow the scan order of each component's
/// first pixel.
pub fn flood_fill_labels(m: &BinaryMask, eight: bool) -> (Vec<u32>, u32) {
    let (w, h) = m.dimensions();
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !m.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if at(m, nx, ny) {
                        let q = ny as usize * w + nx as usize;
                        if labels[q] == 0 {
                            labels[q] = next;
                            stack.push(q);
                        }
                    }
                }
            }
        }
    }
    (labels, next)
}

/// True iff both label images describe the same partition of the pixels.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *ab.entry(x).or_insert(y) != y || *ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Label image from rows of characters: '.' is background, any other
/// character is an instance key.
pub fn labels_from_rows(rows: &[&str]) -> InstanceSet {
    let w = rows[0].len();
    let mut keys: Vec<u8> = Vec::new();
    let mut labels = Vec::with_capacity(w * rows.len());
    for row in rows {
        assert_eq!(row.len(), w);
        for &c in row.as_bytes() {
            if c == b'.' {
                labels.push(0);
            } else {
                let i = keys.iter().position(|&k| k == c).unwrap_or_else(|| {
                    keys.push(c);
                    keys.len() - 1
                });
                labels.push(i as u32 + 1);
            }
        }
    }
    InstanceSet::from_labels(w, rows.len(), labels).unwrap()
}

/// Pixel-count IoU between every (pred, truth) instance pair, ids 1-based.
pub fn brute_iou(pred: &InstanceSet, truth: &InstanceSet) -> Vec<Vec<f64>> {
    let np = pred.len();
    let nt = truth.len();
    let mut out = vec![vec![0.0; nt + 1]; np + 1];
    for p in 1..=np as u32 {
        for t in 1..=nt as u32 {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (&a, &b) in pred.labels().iter().zip(truth.labels()) {
                let (ia, ib) = (a == p, b == t);
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
            out[p as usize][t as usize] = inter as f64 / union as f64;
        }
    }
    out
}

/// Size of a maximum one-to-one matching over pairs with IoU >= threshold,
/// by exhaustive search.
pub fn exhaustive_max_matches(iou: &[Vec<f64>], threshold: f64) -> usize {
    fn go(p: usize, iou: &[Vec<f64>], threshold: f64, used: &mut Vec<bool>) -> usize {
        if p >= iou.len() {
            return 0;
        }
        let mut best = go(p + 1, iou, threshold, used);
        for t in 1..iou[p].len() {
            if !used[t] && iou[p][t] >= threshold {
                used[t] = true;
                best = best.max(1 + go(p + 1, iou, threshold, used));
                used[t] = false;
            }
        }
        best
    }
    let nt = iou.first().map_or(0, |r| r.len());
    go(1, iou, threshold, &mut vec![false; nt])
}

/// A pair of label images with counts and scores worked out by hand.
pub struct MetricFixture {
    pub name: &'static str,
    pub pred: &'static [&'static str],
    pub truth: &'static [&'static str],
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub count_error: usize,
}

pub fn metric_fixtures() -> Vec<MetricFixture> {
    vec![
        MetricFixture {
            name: "identical",
            pred: &["aa..", "aa.b", "...b"],
            truth: &["xx..", "xx.y", "...y"],
            tp: 2, fp: 0, fn_: 0,
            precision: 1.0, recall: 1.0, f1: 1.0, count_error: 0,
        },
        MetricFixture {
            name: "nothing predicted",
            pred: &["....", "....", "...."],
            truth: &["x...", "..y.", "...."],
            tp: 0, fp: 0, fn_: 2,
            precision: 0.0, recall: 0.0, f1: 0.0, count_error: 2,
        },
        MetricFixture {
            name: "nothing present",
            pred: &["....", "....", "...."],
            truth: &["....", "....", "...."],
            tp: 0, fp: 0, fn_: 0,
            precision: 1.0, recall: 1.0, f1: 1.0, count_error: 0,
        },
        MetricFixture {
            name: "all false positives",
            pred: &["a..b", "....", "c..."],
            truth: &["....", "....", "...."],
            tp: 0, fp: 3, fn_: 0,
            precision: 0.0, recall: 0.0, f1: 0.0, count_error: 3,
        },
        MetricFixture {
            // Pred a covers 2 of truth x's 4 pixels: IoU 2/4 = 0.5, matched.
            name: "iou exactly one half",
            pred: &["aa..", "....", "...."],
            truth: &["xx..", "xx..", "...."],
            tp: 1, fp: 0, fn_: 0,
            precision: 1.0, recall: 1.0, f1: 1.0, count_error: 0,
        },
        MetricFixture {
            // IoU 1/3 < 0.5: one fp and one fn.
            name: "iou one third",
            pred: &["a...", "....", "...."],
            truth: &["xxx.", "....", "...."],
            tp: 0, fp: 1, fn_: 1,
            precision: 0.0, recall: 0.0, f1: 0.0, count_error: 0,
        },
        MetricFixture {
            // One pred spans both truths: IoU 2/4 with x and 2/4 with y; the
            // tie goes to the lower truth id, y stays unmatched.
            name: "merged prediction",
            pred: &["aaaa", "....", "...."],
            truth: &["xxyy", "....", "...."],
            tp: 1, fp: 0, fn_: 1,
            precision: 1.0, recall: 0.5, f1: 2.0 / 3.0, count_error: 1,
        },
        MetricFixture {
            // Truth split into two preds: IoU 1/2 each; one matches.
            name: "split prediction",
            pred: &["aabb", "....", "...."],
            truth: &["xxxx", "....", "...."],
            tp: 1, fp: 1, fn_: 0,
            precision: 0.5, recall: 1.0, f1: 2.0 / 3.0, count_error: 1,
        },
        MetricFixture {
            // 3 matched, 1 fp, 2 fn: P 3/4, R 3/5, F1 = 2*9/20 / (27/20) = 2/3.
            name: "mixed",
            pred: &["a.b.c.d", ".......", "......."],
            truth: &["x.y.z..", ".......", "u.v...."],
            tp: 3, fp: 1, fn_: 2,
            precision: 0.75, recall: 0.6, f1: 2.0 / 3.0, count_error: 1,
        },
        MetricFixture {
            // 10 truths, 5 exact preds, no fp.
            name: "half recall",
            pred: &["a.b.c.d.e.", "..........", ".........."],
            truth: &["a.b.c.d.e.", "..........", "f.g.h.i.j."],
            tp: 5, fp: 0, fn_: 5,
            precision: 1.0, recall: 0.5, f1: 2.0 / 3.0, count_error: 5,
        },
    ]
}

/// Up to `max` random rectangles, non-overlapping within the set.
pub fn random_rects(rng: &mut impl Rng, w: usize, h: usize, max: usize) -> InstanceSet {
    let mut labels = vec![0u32; w * h];
    let n = rng.gen_range(0..=max);
    let mut next = 1;
    for _ in 0..n {
        let (rw, rh) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (x0, y0) = (rng.gen_range(0..=w - rw), rng.gen_range(0..=h - rh));
        let free = (y0..y0 + rh).all(|y| (x0..x0 + rw).all(|x| labels[y * w + x] == 0));
        if !free {
            continue;
        }
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                labels[y * w + x] = next;
            }
        }
        next += 1;
    }
    InstanceSet::from_labels(w, h, labels).unwrap()
}
