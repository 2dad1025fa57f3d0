//! Brute-force reference implementations for tests.
//!
//! Nothing here shares code with `exemvad-core`: inputs are plain tuples and
//! every quantity is recomputed the slow, obvious way so the production
//! paths can be checked against it.

pub mod bleu {
    fn tokens(s: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in s.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    }

    /// Textbook sentence BLEU-4 with add-one smoothing on orders 2..4.
    pub fn sentence_bleu4(candidate: &str, reference: &str) -> f64 {
        let c = tokens(candidate);
        let r = tokens(reference);
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let mut product = 1.0f64;
        for n in 1..=4 {
            let cg = grams(&c, n);
            let rg = grams(&r, n);
            // clipped count: for each distinct candidate gram, min(count in c, count in r)
            let mut matched = 0usize;
            let mut seen: Vec<&Vec<String>> = Vec::new();
            for g in &cg {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_c = cg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                matched += in_c.min(in_r);
            }
            let p = if n == 1 {
                matched as f64 / cg.len() as f64
            } else {
                (matched as f64 + 1.0) / (cg.len() as f64 + 1.0)
            };
            if p == 0.0 {
                return 0.0;
            }
            product *= p;
        }
        let bp = if c.len() > r.len() {
            1.0
        } else {
            (1.0 - r.len() as f64 / c.len() as f64).exp()
        };
        bp * product.powf(0.25)
    }
}

pub mod crop {
    /// Literal evaluation of the merge / pad / clamp steps for one unit.
    /// Boxes are `[x1, y1, x2, y2]`.
    pub fn window(b1: [f64; 4], b2: [f64; 4], width: f64, height: f64, w_min: f64, h_min: f64) -> [f64; 4] {
        let x1 = if b1[0] < b2[0] { b1[0] } else { b2[0] };
        let y1 = if b1[1] < b2[1] { b1[1] } else { b2[1] };
        let x2 = if b1[2] > b2[2] { b1[2] } else { b2[2] };
        let y2 = if b1[3] > b2[3] { b1[3] } else { b2[3] };
        let half_w = (x2 - x1).abs() / 2.0;
        let half_h = (y2 - y1).abs() / 2.0;
        let w = if half_w > w_min { half_w } else { w_min };
        let h = if half_h > h_min { half_h } else { h_min };
        let x_min = if x1 - w > 0.0 { x1 - w } else { 0.0 };
        let y_min = if y1 - h > 0.0 { y1 - h } else { 0.0 };
        let x_max = if x2 + w < width { x2 + w } else { width };
        let y_max = if y2 + h < height { y2 + h } else { height };
        [x_min, y_min, x_max, y_max]
    }
}

pub mod metrics {
    /// Predicted region: `(frame, [x1, y1, x2, y2], score)`.
    pub type Pred = (u64, [f64; 4], f64);
    /// Ground-truth region: `(frame, [x1, y1, x2, y2], track)`.
    pub type Gt = (u64, [f64; 4], u64);

    pub fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
        let union = area(a) + area(b) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Area under a piecewise-linear curve through `(0, 0)` and `points`
    /// (sorted by x), restricted to `x in [0, 1]`, holding the last y.
    pub fn area_0_1(points: &[(f64, f64)]) -> f64 {
        let mut pts = vec![(0.0, 0.0)];
        pts.extend_from_slice(points);
        let last_y = pts.last().unwrap().1;
        if pts.last().unwrap().0 < 1.0 {
            pts.push((1.0, last_y));
        }
        let mut area = 0.0;
        for w in pts.windows(2) {
            let ((xa, ya), (xb, yb)) = (w[0], w[1]);
            if xa >= 1.0 {
                break;
            }
            let (xe, ye) = if xb > 1.0 {
                (1.0, ya + (yb - ya) * (1.0 - xa) / (xb - xa))
            } else {
                (xb, yb)
            };
            area += 0.5 * (ya + ye) * (xe - xa);
        }
        area
    }

    fn thresholds(preds: &[Pred]) -> Vec<f64> {
        let mut ts: Vec<f64> = preds.iter().map(|p| p.2).filter(|&s| s > 0.0).collect();
        ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ts.dedup();
        ts
    }

    fn detected_at(preds: &[Pred], g: &Gt, tau: f64, beta: f64) -> bool {
        preds
            .iter()
            .any(|p| p.0 == g.0 && p.2 >= tau && p.2 > 0.0 && iou(p.1, g.1) >= beta)
    }

    fn false_positives_at(preds: &[Pred], gt: &[Gt], tau: f64, beta: f64) -> usize {
        preds
            .iter()
            .filter(|p| p.2 >= tau && p.2 > 0.0)
            .filter(|p| !gt.iter().any(|g| g.0 == p.0 && iou(p.1, g.1) >= beta))
            .count()
    }

    /// Region-based criterion by exhaustive threshold enumeration.
    pub fn rbdc(preds: &[Pred], gt: &[Gt], beta: f64, frames: u64) -> f64 {
        let mut pts = Vec::new();
        for tau in thresholds(preds) {
            let hit = gt.iter().filter(|g| detected_at(preds, g, tau, beta)).count();
            let fp = false_positives_at(preds, gt, tau, beta);
            pts.push((fp as f64 / frames as f64, hit as f64 / gt.len() as f64));
        }
        area_0_1(&pts)
    }

    /// Track-based criterion by exhaustive enumeration.
    pub fn tbdc(preds: &[Pred], gt: &[Gt], beta: f64, gamma: f64, frames: u64) -> f64 {
        let mut ids: Vec<u64> = gt.iter().map(|g| g.2).collect();
        ids.sort();
        ids.dedup();
        let mut pts = Vec::new();
        for tau in thresholds(preds) {
            let mut hit_tracks = 0;
            for id in &ids {
                let regions: Vec<&Gt> = gt.iter().filter(|g| g.2 == *id).collect();
                let hit = regions.iter().filter(|g| detected_at(preds, g, tau, beta)).count();
                if hit as f64 / regions.len() as f64 >= gamma {
                    hit_tracks += 1;
                }
            }
            let fp = false_positives_at(preds, gt, tau, beta);
            pts.push((fp as f64 / frames as f64, hit_tracks as f64 / ids.len() as f64));
        }
        area_0_1(&pts)
    }

    /// ROC AUC by counting all positive/negative pairs; ties count one half.
    pub fn frame_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_of_step_curve() {
        assert_eq!(metrics::area_0_1(&[(0.0, 1.0), (0.5, 1.0)]), 1.0);
        assert!((metrics::area_0_1(&[(2.0, 1.0)]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn crop_worked_example() {
        let w = crop::window([100.0, 100.0, 200.0, 180.0], [120.0, 110.0, 220.0, 200.0], 1280.0, 720.0, 240.0, 135.0);
        assert_eq!(w, [0.0, 0.0, 460.0, 335.0]);
    }
}
