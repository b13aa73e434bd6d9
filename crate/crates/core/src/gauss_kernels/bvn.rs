//! Upper-quadrant probabilities of the standard bivariate normal law
//! (Drezner–Wesolowsky with Genz's treatment of `|ρ|` near one).

use std::f64::consts::PI;

use crate::rules::{legendre, norm_cdf};

const TWO_PI: f64 = 2.0 * PI;

/// `P(X > a, Y > b)` for a standard bivariate normal pair with correlation `rho`.
pub fn bvn_upper_quadrant(a: f64, b: f64, rho: f64) -> f64 {
    bvn_upper(a, b, rho, (1.0 - rho) * (1.0 + rho))
}

/// As [`bvn_upper_quadrant`] with `1 − ρ²` supplied separately, so callers
/// holding an accurate value near `|ρ| = 1` do not lose it.
pub(crate) fn bvn_upper(h: f64, k: f64, r: f64, omr: f64) -> f64 {
    if h == f64::NEG_INFINITY {
        return norm_cdf(-k);
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if r < 0.0 {
        // P(X>h, Y>k; r) = P(X>h) − P(X>h, −Y>−k; −r)
        return (norm_cdf(-h) - bvn_upper(h, -k, -r, omr)).max(0.0);
    }
    let gl = legendre(20);
    let hk = h * k;
    let mut bvn = 0.0;
    if r <= 0.925 {
        if r > 0.0 {
            let hs = 0.5 * (h * h + k * k);
            let asr = 0.5 * r.asin();
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                let sn = (asr * (x + 1.0)).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
            bvn *= asr / TWO_PI;
        }
        bvn += norm_cdf(-h) * norm_cdf(-k);
        return bvn.clamp(0.0, 1.0);
    }
    if omr > 0.0 {
        let a_s = omr;
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (b_s / a_s + hk);
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = (h - k).abs();
            bvn -= (-0.5 * hk).exp()
                * TWO_PI.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a *= 0.5;
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let xv = a * (x + 1.0);
            let x_s = xv * xv;
            let r_s = (1.0 - x_s).sqrt();
            let asr = -0.5 * (b_s / x_s + hk);
            if asr > -100.0 {
                let one_minus_rs = x_s / (1.0 + r_s);
                bvn += a
                    * w
                    * asr.exp()
                    * ((-hk * one_minus_rs / (2.0 * (1.0 + r_s))).exp() / r_s
                        - (1.0 + c * x_s * (1.0 + d * x_s)));
            }
        }
        bvn /= -TWO_PI;
    }
    (bvn + norm_cdf(-h.max(k))).clamp(0.0, 1.0)
}
