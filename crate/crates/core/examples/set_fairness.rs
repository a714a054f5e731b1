//! Fairness of an unordered result set: the closed form agrees with the mean
//! over every ordering of the set.

use fairr::fairness::{ifairr, nfairr_set, set_fairr, set_fairr_bruteforce, Cutoff};

fn main() -> fairr::Result<()> {
    let retrieved = [1.0, 0.0, 0.5, 1.0, 0.25];
    let background = [1.0, 1.0, 1.0, 0.5, 0.25, 0.0, 0.0];
    for t in [1, 3, 5] {
        let cutoff = Cutoff::new(t)?;
        println!(
            "t={t}: SetFaiRR {:.6} (all orderings {:.6}), ideal {:.6}, normalized {:.6}",
            set_fairr(&retrieved, cutoff)?,
            set_fairr_bruteforce(&retrieved, cutoff)?,
            ifairr(&background, cutoff)?,
            nfairr_set(&retrieved, &background, cutoff)?
        );
    }
    Ok(())
}
