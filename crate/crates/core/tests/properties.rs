use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use sat2qubo::annealer::Walker;
use sat2qubo::cnf::{self, Clause, Formula, Literal};
use sat2qubo::patternsearch::{search_patterns_with, SearchSpec};
use sat2qubo::qubo::{hobo_energy, quadratize, BinaryPolynomial, Qubo, QuboBuilder};
use sat2qubo::spectrum::{self, cross_histogram, full_spectrum_with, hamming_histograms_with, within_histogram};
use sat2qubo::transforms::{chancellor_gadget, decode, transform, PatternSet, TransformKind};
use sat2qubo::Exec;

fn formula_strategy(max_n: usize, max_m: usize) -> impl Strategy<Value = Formula> {
    (3..=max_n).prop_flat_map(move |n| {
        let clause = (
            proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 3).prop_shuffle(),
            proptest::array::uniform3(any::<bool>()),
        )
            .prop_map(|(vars, neg)| {
                let lits = [0, 1, 2].map(|k| Literal { var: vars[k], negated: neg[k] });
                Clause::new(lits).unwrap()
            });
        proptest::collection::vec(clause, 1..=max_m).prop_map(move |cs| Formula::new(n, cs).unwrap())
    })
}

fn qubo_strategy(max_n: usize) -> impl Strategy<Value = Qubo> {
    (1..=max_n).prop_flat_map(|n| {
        let entry = (0..n, 0..n, -4i32..=4);
        // quarter steps exercise the non-integral path while staying exact
        let unit = prop_oneof![Just(1.0), Just(0.25)];
        (Just(n), proptest::collection::vec(entry, 0..3 * n), -3i32..=3, unit).prop_map(|(n, es, off, unit)| {
            let mut b = QuboBuilder::new(n);
            b.add_offset(off as f64);
            for (i, j, v) in es {
                b.add_quadratic(i, j, v as f64 * unit);
            }
            b.build()
        })
    })
}

fn bits(index: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| index >> i & 1 == 1).collect()
}

/// `min over auxiliaries` of the QUBO energy for each formula assignment.
fn min_over_aux(q: &Qubo, n: usize) -> Vec<f64> {
    let aux = q.size() - n;
    let mut out = vec![f64::INFINITY; 1 << n];
    for a in 0..1u64 << aux {
        for x in 0..1u64 << n {
            let e = q.energy_of_index(x | a << n);
            let slot = &mut out[x as usize];
            *slot = slot.min(e);
        }
    }
    out
}

fn per_clause_gap(kind: TransformKind) -> f64 {
    match kind {
        TransformKind::ChancellorJ1 | TransformKind::ChancellorJ5 => 8.0,
        TransformKind::Algorithm => 1.0,
        TransformKind::CountTrue => 6.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimacs_round_trip(f in formula_strategy(12, 20)) {
        let text = cnf::write_dimacs(&f);
        let back = cnf::parse_dimacs(&text).unwrap();
        prop_assert_eq!(&back, &f);
        prop_assert_eq!(cnf::write_dimacs(&back), text);
    }

    #[test]
    fn generator_is_seeded_and_well_formed(n in 3usize..20, m in 1usize..60, seed in any::<u64>()) {
        let f = cnf::generate_random(n, m, seed).unwrap();
        prop_assert_eq!(f.num_clauses(), m);
        for c in f.clauses() {
            let vars: BTreeSet<usize> = c.literals().iter().map(|l| l.var).collect();
            prop_assert_eq!(vars.len(), 3);
            prop_assert!(vars.iter().all(|&v| v < n));
        }
        prop_assert_eq!(cnf::generate_random(n, m, seed).unwrap(), f);
    }

    #[test]
    fn exhaustive_sat_matches_direct_count(f in formula_strategy(8, 30)) {
        let report = cnf::exhaustive_sat_with(&f, Exec::Sequential).unwrap();
        let n = f.num_vars();
        let sols: Vec<u64> = (0..1u64 << n)
            .filter(|&x| f.clauses().iter().all(|c| c.literals().iter().any(|l| (x >> l.var & 1 == 1) != l.negated)))
            .collect();
        prop_assert_eq!(report.solution_count, sols.len() as u64);
        prop_assert_eq!(report.satisfiable, !sols.is_empty());
        prop_assert_eq!(report.witness.map(|w| w.0), sols.first().map(|&x| bits(x, n)));
    }

    /// For every original assignment, minimizing the quadratized form over
    /// the auxiliaries recovers the higher-order value.
    #[test]
    fn quadratization_is_exact_on_original_variables(
        n in 3usize..=6,
        terms in proptest::collection::vec((proptest::sample::subsequence((0..6usize).collect::<Vec<_>>(), 1..=3), -5i32..=5), 1..8),
    ) {
        let mut h = BinaryPolynomial::new(n);
        for (vars, c) in terms {
            let vars: Vec<usize> = vars.into_iter().filter(|&v| v < n).collect();
            if !vars.is_empty() {
                h.add_term(&vars, c as f64);
            }
        }
        let qz = quadratize(&h);
        prop_assume!(qz.qubo.size() <= 14);
        let mins = min_over_aux(&qz.qubo, n);
        for x in 0..1u64 << n {
            prop_assert_eq!(mins[x as usize], hobo_energy(&h, &bits(x, n)).unwrap());
        }
    }

    #[test]
    fn walker_tracks_energy_and_deltas(q in qubo_strategy(12), seed in any::<u64>(), flips in proptest::collection::vec(0usize..12, 1..40)) {
        let n = q.size();
        let mut w = Walker::random(&q, Xoshiro256PlusPlus::seed_from_u64(seed));
        for i in flips.into_iter().map(|i| i % n) {
            w.flip(i);
            let x = w.state().to_vec();
            prop_assert_eq!(w.energy(), q.energy(&x).unwrap());
            for k in 0..n {
                prop_assert_eq!(w.deltas()[k], q.delta_energy(&x, k).unwrap());
            }
        }
    }

    #[test]
    fn ising_form_agrees(q in qubo_strategy(8)) {
        let ising = sat2qubo::qubo::to_ising(&q);
        for x in 0..1u64 << q.size() {
            let s: Vec<i8> = bits(x, q.size()).iter().map(|&b| if b { 1 } else { -1 }).collect();
            prop_assert!((ising.energy(&s) - q.energy_of_index(x)).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Minimized over auxiliaries, each transformation equals its ground
    /// bound plus a fixed gap per violated clause. Ground states therefore
    /// decode to satisfying assignments exactly when the formula is satisfiable.
    #[test]
    fn transforms_price_violated_clauses(f in formula_strategy(6, 10)) {
        let n = f.num_vars();
        let sat = cnf::exhaustive_sat(&f).unwrap().satisfiable;
        for kind in TransformKind::ALL {
            let r = transform(&f, kind);
            prop_assume!(r.num_bits() <= 18);
            let mins = min_over_aux(&r.qubo, n);
            for x in 0..1u64 << n {
                let a = cnf::Assignment(bits(x, n));
                let violated = cnf::violated_count(&f, &a).unwrap() as f64;
                prop_assert_eq!(mins[x as usize], r.ground_energy_bound() + per_clause_gap(kind) * violated, "{} at {:b}", kind, x);
            }
            let s = full_spectrum_with(&r.qubo, Exec::Sequential).unwrap();
            let (e0, ground) = s.level(0);
            for &cfg in ground {
                let a = decode(&r, &bits(cfg as u64, r.num_bits())).unwrap();
                prop_assert_eq!(cnf::is_satisfied_by(&f, &a), sat);
            }
            if sat {
                prop_assert_eq!(e0, r.ground_energy_bound());
            }
        }
    }

    /// Superimposing is additive: the formula QUBO is the sum of the
    /// single-clause QUBOs (with per-clause ancillas for the gadget transforms).
    #[test]
    fn gadget_transforms_are_additive(f in formula_strategy(6, 8), x in any::<u64>()) {
        for kind in [TransformKind::ChancellorJ1, TransformKind::ChancellorJ5, TransformKind::Algorithm] {
            let whole = transform(&f, kind);
            let total = whole.num_bits();
            let full = bits(x & ((1u64 << total) - 1), total);
            let mut sum = 0.0;
            for (ci, c) in f.clauses().iter().enumerate() {
                let one = Formula::new(f.num_vars(), vec![*c]).unwrap();
                let part = transform(&one, kind);
                let mut y = full[..f.num_vars()].to_vec();
                y.push(full[f.num_vars() + ci]);
                sum += part.qubo.energy(&y).unwrap();
            }
            prop_assert_eq!(whole.qubo.energy(&full).unwrap(), sum);
        }
    }

    #[test]
    fn spectrum_partitions_all_configurations(q in qubo_strategy(10)) {
        let s = full_spectrum_with(&q, Exec::Parallel).unwrap();
        let mut seen = vec![false; 1 << q.size()];
        let mut prev = f64::NEG_INFINITY;
        for (e, cfgs) in s.levels() {
            prop_assert!(e > prev);
            prev = e;
            prop_assert!(cfgs.windows(2).all(|w| w[0] < w[1]));
            for &c in cfgs {
                prop_assert!(!seen[c as usize]);
                seen[c as usize] = true;
                prop_assert_eq!(q.energy_of_index(c as u64), e);
            }
        }
        prop_assert!(seen.iter().all(|&b| b));
        prop_assert_eq!(&s, &full_spectrum_with(&q, Exec::Sequential).unwrap());
    }

    #[test]
    fn hamming_matches_pair_oracle(q in qubo_strategy(10)) {
        let s = full_spectrum_with(&q, Exec::Sequential).unwrap();
        prop_assume!(s.num_levels() >= 2);
        let h = hamming_histograms_with(&s, Exec::Parallel).unwrap();
        let n = q.size();
        let (g, x) = (s.level(0).1, s.level(1).1);
        let mut within_g = vec![0u64; n + 1];
        let mut within_x = vec![0u64; n + 1];
        let mut cross = vec![0u64; n + 1];
        for i in 0..g.len() {
            for j in 0..g.len() {
                if i < j { within_g[(g[i] ^ g[j]).count_ones() as usize] += 1; }
            }
            for &b in x { cross[(g[i] ^ b).count_ones() as usize] += 1; }
        }
        for i in 0..x.len() {
            for j in i + 1..x.len() { within_x[(x[i] ^ x[j]).count_ones() as usize] += 1; }
        }
        prop_assert_eq!(&h.ground.counts, &within_g);
        prop_assert_eq!(&h.excited.counts, &within_x);
        prop_assert_eq!(&h.cross.counts, &cross);
        prop_assert_eq!(cross_histogram(x, g, n, Exec::Sequential).counts, cross);
    }

    /// Large sets take the transform path; compare against direct counting.
    #[test]
    fn hamming_transform_path_matches_direct(seed in any::<u64>(), n in 13usize..=16) {
        use rand::Rng;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut a: Vec<u32> = (0..6500).map(|_| rng.random_range(0..1u32 << n)).collect();
        a.sort_unstable();
        a.dedup();
        let h = within_histogram(&a, n, Exec::Parallel);
        let mut direct = vec![0u64; n + 1];
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                direct[(a[i] ^ a[j]).count_ones() as usize] += 1;
            }
        }
        prop_assert_eq!(h.counts, direct);
    }
}

fn kron(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (ra, rb) = (a.len(), b.len());
    let mut out = vec![vec![0.0; ra * rb]; ra * rb];
    for i in 0..ra {
        for j in 0..ra {
            for k in 0..rb {
                for l in 0..rb {
                    out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// The QUBO lifted by `x_i ↦ (I + Z_i)/2` with explicit Kronecker products,
/// factor 0 leftmost.
fn tensor_hamiltonian(q: &Qubo) -> Vec<Vec<f64>> {
    let n = q.size();
    let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let proj = vec![vec![1.0, 0.0], vec![0.0, 0.0]]; // (I + Z) / 2, Z = diag(1, -1)
    let operator = |ones: &[usize]| {
        (0..n).fold(vec![vec![1.0]], |acc, i| kron(&acc, if ones.contains(&i) { &proj } else { &eye }))
    };
    let dim = 1 << n;
    let mut h = vec![vec![0.0; dim]; dim];
    let mut add = |m: Vec<Vec<f64>>, c: f64| {
        for r in 0..dim {
            for s in 0..dim {
                h[r][s] += c * m[r][s];
            }
        }
    };
    add(operator(&[]), q.offset());
    for i in 0..n {
        add(operator(&[i]), q.diag()[i]);
    }
    for &(i, j, v) in q.upper() {
        add(operator(&[i, j]), v);
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tensor_construction_matches_enumeration(q in qubo_strategy(5)) {
        let h = tensor_hamiltonian(&q);
        let diag = spectrum::diagonal_hamiltonian(&q);
        for (r, row) in h.iter().enumerate() {
            for (s, &v) in row.iter().enumerate() {
                if r == s {
                    prop_assert_eq!(v, diag[r]);
                } else {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
        let mut a = diag.clone();
        let mut b: Vec<f64> = (0..1u64 << q.size()).map(|x| q.energy_of_index(x)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        prop_assert_eq!(a, b);
    }
}

fn naive_pattern_valid(cells: &[f64; 10], type_id: usize) -> bool {
    let mut m = [[0.0; 4]; 4];
    let mut k = 0;
    for i in 0..4 {
        for j in i..4 {
            m[i][j] = cells[k];
            k += 1;
        }
    }
    let energy = |x: [u8; 4]| {
        let mut e = 0.0;
        for i in 0..4 {
            for j in i..4 {
                e += m[i][j] * (x[i] * x[j]) as f64;
            }
        }
        e
    };
    let mut sat_levels = Vec::new();
    let mut unsat_level = None;
    for a in 0..2u8 {
        for b in 0..2u8 {
            for c in 0..2u8 {
                let lit = [a, b, c];
                // the last `type_id` literals are negated
                let satisfied = (0..3).any(|s| if s >= 3 - type_id { lit[s] == 0 } else { lit[s] == 1 });
                let best = energy([a, b, c, 0]).min(energy([a, b, c, 1]));
                if satisfied {
                    sat_levels.push(best);
                } else {
                    unsat_level = Some(best);
                }
            }
        }
    }
    let l = sat_levels[0];
    sat_levels.iter().all(|&e| e == l) && unsat_level.unwrap() > l
}

#[test]
fn pattern_search_matches_naive_enumeration() {
    for values in [vec![0.0, 1.0], vec![-1.0, 1.0], vec![-1.0, 0.0], vec![-2.0, 1.0]] {
        for type_id in 0..4 {
            let found: Vec<[f64; 10]> = search_patterns_with(&SearchSpec::new(values.clone(), type_id), Exec::Parallel)
                .unwrap()
                .iter()
                .map(|p| p.cells())
                .collect();
            let mut naive = Vec::new();
            for idx in 0..1u32 << 10 {
                let cells: [f64; 10] = std::array::from_fn(|k| values[(idx >> (9 - k) & 1) as usize]);
                if naive_pattern_valid(&cells, type_id) {
                    naive.push(cells);
                }
            }
            assert_eq!(found, naive, "values {values:?}, type {type_id}");
        }
    }
}

#[test]
fn table_patterns_are_found_over_minus_one_zero_one() {
    let table = PatternSet::algorithm();
    for type_id in 0..4 {
        let spec = SearchSpec::new(vec![-1.0, 0.0, 1.0], type_id);
        let found = search_patterns_with(&spec, Exec::Parallel).unwrap();
        assert!(found.iter().any(|p| p.cells() == table.0[type_id].cells()), "type {type_id}");
        assert!(found.iter().all(|p| naive_pattern_valid(&p.cells(), type_id)));
    }
}

#[test]
fn chancellor_gadgets_separate_by_eight() {
    for j in [1.0, 5.0] {
        for mask in 0..8u32 {
            let neg = [0, 1, 2].map(|k| mask >> k & 1 == 1);
            let g = chancellor_gadget(neg, j);
            let mut sat = f64::INFINITY;
            let mut unsat = f64::INFINITY;
            for s in 0..16u64 {
                let satisfied = (0..3).any(|k| (s >> k & 1 == 1) != neg[k]);
                let e = g.energy_of_index(s);
                if satisfied { sat = sat.min(e) } else { unsat = unsat.min(e) }
            }
            assert_eq!(unsat - sat, 8.0);
        }
    }
}
