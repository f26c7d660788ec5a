//! Binary symmetric channel and the entropy bookkeeping around it.

use rand::Rng;

use crate::{Error, Result};

fn check_crossover(beta: f64) -> Result<()> {
    if (0.0..=0.5).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta must lie in [0, 0.5], got {beta}")))
    }
}

/// `H2(beta)` in bits with `0 log 0 = 0`.
pub fn binary_entropy(beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("probability must lie in [0, 1], got {beta}")));
    }
    let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(term(beta) + term(1.0 - beta))
}

/// Flips each bit independently with probability `beta`.
pub fn apply_bsc<R: Rng + ?Sized>(bits: &[bool], beta: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_crossover(beta)?;
    Ok(bits
        .iter()
        .map(|&b| if beta > 0.0 && rng.random::<f64>() < beta { !b } else { b })
        .collect())
}

/// MI (bits) between a uniform bit and its BSC output, by summing over the
/// four cells of the joint pmf.
pub fn bsc_mi_oracle(beta: f64) -> Result<f64> {
    check_crossover(beta)?;
    let p_c = [0.5, 0.5];
    let channel = |c: usize, y: usize| if c == y { 1.0 - beta } else { beta };
    let p_y: Vec<f64> = (0..2).map(|y| (0..2).map(|c| p_c[c] * channel(c, y)).sum()).collect();
    let mut mi = 0.0;
    for c in 0..2 {
        for y in 0..2 {
            let p = p_c[c] * channel(c, y);
            if p > 0.0 {
                mi += p * (p / (p_c[c] * p_y[y])).log2();
            }
        }
    }
    Ok(mi)
}

/// Crossover probability in `[0, 0.5]` at which `sources` uniform bits carry
/// `target_bits` of information through the channel.
pub fn bsc_beta_for_mi(sources: usize, target_bits: f64) -> Result<f64> {
    if sources == 0 {
        return Err(Error::Domain("need at least one information source".into()));
    }
    let cap = sources as f64;
    if !(0.0..=cap).contains(&target_bits) {
        return Err(Error::Domain(format!(
            "{target_bits} bits is not reachable with {sources} binary sources (max {cap})"
        )));
    }
    // Solve H2(beta) = 1 - target/sources on [0, 0.5]; H2 is increasing there.
    let want = 1.0 - target_bits / cap;
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    if want <= 0.0 {
        return Ok(0.0);
    }
    if want >= 1.0 {
        return Ok(0.5);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if binary_entropy(mid)? < want {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-17 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
