//! FTP-style file arrivals and segmentation.

use rand::Rng;
use rand_distr::{Distribution, Exp};

/// Poisson file arrival instants on `[0, duration_s)`.
pub fn traffic_arrivals<R: Rng + ?Sized>(rate_per_s: f64, duration_s: f64, rng: &mut R) -> Vec<f64> {
    if rate_per_s <= 0.0 || duration_s <= 0.0 {
        return Vec::new();
    }
    let exp = Exp::new(rate_per_s).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t >= duration_s {
            return out;
        }
        out.push(t);
    }
}

/// Segment sizes in bytes: full segments then one partial remainder.
pub fn segments(file_bytes: u64, segment_bytes: u64) -> Vec<u64> {
    let full = file_bytes / segment_bytes;
    let rest = file_bytes % segment_bytes;
    let mut out = vec![segment_bytes; full as usize];
    if rest > 0 {
        out.push(rest);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_has_no_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(traffic_arrivals(0.0, 100.0, &mut rng).is_empty());
    }

    #[test]
    fn half_megabyte_file() {
        let s = segments(500_000, 8_000);
        assert_eq!(s.len(), 63);
        assert_eq!(s.iter().filter(|&&b| b == 8_000).count(), 62);
        assert_eq!(*s.last().unwrap(), 4_000);
        assert_eq!(s.iter().sum::<u64>(), 500_000);
        assert_eq!(segments(16_000, 8_000), vec![8_000, 8_000]);
    }

    #[test]
    fn arrivals_sorted_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = traffic_arrivals(5.0, 10.0, &mut rng);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&t| (0.0..10.0).contains(&t)));
    }
}
