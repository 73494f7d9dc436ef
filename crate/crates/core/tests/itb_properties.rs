use proptest::prelude::*;
use punet::model::itb::{self, itb_forward};
use punet::{ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Floating-point reassociation inside attention sums is the only source of
/// difference under token permutation.
const PERMUTATION_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
struct Case {
    h: usize,
    w: usize,
    heads: usize,
    channels: usize,
    tokens: usize,
    ffn_ratio: usize,
    seed: u64,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..6, 1usize..6, 1usize..4, 1usize..5, 1usize..4, 1usize..5, any::<u64>()).prop_map(
        |(h, w, heads, per_head, tokens, ffn_ratio, seed)| Case {
            h,
            w,
            heads,
            channels: heads * per_head,
            tokens,
            ffn_ratio,
            seed,
        },
    )
}

fn setup(c: &Case) -> (ParamStore<f64>, Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut store = ParamStore::new();
    itb::init(&mut store, &mut rng, "p", c.channels, c.ffn_ratio).unwrap();
    let f = Tensor::from_fn(&[c.h, c.w, c.channels], |_| rng.random_range(-2.0..2.0));
    let p = Tensor::from_fn(&[c.tokens, c.channels], |_| rng.random_range(-2.0..2.0));
    (store, f, p)
}

fn run(store: &ParamStore<f64>, heads: usize, f: &Tensor<f64>, p: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::inference();
    let fv = tape.constant(f.clone());
    let pv = tape.constant(p.clone());
    let (fh, ph) = itb_forward(&mut tape, store, "p", heads, fv, pv).unwrap();
    (tape.value(fh).clone(), tape.value(ph).clone())
}

fn permute_pixels(f: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let c = f.last_dim();
    Tensor::from_fn(f.shape(), |i| f.data()[perm[i / c] * c + i % c])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shapes_are_preserved(c in case()) {
        let (store, f, p) = setup(&c);
        let (fh, ph) = run(&store, c.heads, &f, &p);
        prop_assert_eq!(fh.shape(), f.shape());
        prop_assert_eq!(ph.shape(), p.shape());
        prop_assert!(fh.all_finite() && ph.all_finite());
    }

    #[test]
    fn zeroed_residual_branches_are_identity(c in case()) {
        let (mut store, f, p) = setup(&c);
        for name in ["itb.p.o.weight", "itb.p.o.bias", "itb.p.ffn2.weight", "itb.p.ffn2.bias"] {
            let shape = store.value(name).unwrap().shape().to_vec();
            store.set_value(name, Tensor::zeros(&shape)).unwrap();
        }
        let (fh, ph) = run(&store, c.heads, &f, &p);
        prop_assert_eq!(fh, f);
        prop_assert_eq!(ph, p);
    }

    #[test]
    fn imaging_tokens_are_permutation_equivariant(c in case()) {
        let (store, f, p) = setup(&c);
        let n = c.h * c.w;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(c.seed ^ 1));
        let mut inverse = vec![0; n];
        for (i, &j) in perm.iter().enumerate() {
            inverse[j] = i;
        }
        let (fh, ph) = run(&store, c.heads, &f, &p);
        let (fh_perm, ph_perm) = run(&store, c.heads, &permute_pixels(&f, &perm), &p);
        let restored = permute_pixels(&fh_perm, &inverse);
        for (a, b) in restored.data().iter().zip(fh.data()) {
            prop_assert!((a - b).abs() < PERMUTATION_TOL, "{a} vs {b}");
        }
        for (a, b) in ph_perm.data().iter().zip(ph.data()) {
            prop_assert!((a - b).abs() < PERMUTATION_TOL, "{a} vs {b}");
        }
    }
}
