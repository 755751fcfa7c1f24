use debm::evaluate::{kendall_distance, normalized_kendall_error};
use proptest::prelude::*;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force_inversions(a: &[usize], b: &[usize]) -> usize {
    let pos_b = |x: usize| b.iter().position(|&y| y == x).unwrap();
    let mut count = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if pos_b(a[i]) > pos_b(a[j]) {
                count += 1;
            }
        }
    }
    count
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

#[test]
fn agrees_with_brute_force_on_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..1000 {
        let n = 1 + k % 12;
        let a = shuffled(n, &mut rng);
        let b = shuffled(n, &mut rng);
        assert_eq!(kendall_distance(&a, &b).unwrap(), brute_force_inversions(&a, &b));
    }
}

#[test]
fn extreme_values() {
    for n in 2..10 {
        let s: Vec<usize> = (0..n).collect();
        let r: Vec<usize> = s.iter().rev().copied().collect();
        assert_eq!(normalized_kendall_error(&s, &s).unwrap(), 0.0);
        assert_eq!(normalized_kendall_error(&s, &r).unwrap(), 1.0);
    }
    assert_eq!(normalized_kendall_error(&[0], &[0]).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn symmetric(seed in any::<u64>(), n in 1usize..=15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = shuffled(n, &mut rng);
        let b = shuffled(n, &mut rng);
        prop_assert_eq!(normalized_kendall_error(&a, &b).unwrap(), normalized_kendall_error(&b, &a).unwrap());
    }

    #[test]
    fn triangle_inequality(seed in any::<u64>(), n in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = shuffled(n, &mut rng);
        let b = shuffled(n, &mut rng);
        let c = shuffled(n, &mut rng);
        let ab = kendall_distance(&a, &b).unwrap();
        let bc = kendall_distance(&b, &c).unwrap();
        let ac = kendall_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn error_is_in_unit_interval(seed in any::<u64>(), n in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = normalized_kendall_error(&shuffled(n, &mut rng), &shuffled(n, &mut rng)).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
