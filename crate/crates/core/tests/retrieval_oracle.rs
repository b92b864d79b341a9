//! Equivalence of the heap-select scan against the brute-force oracle, plus
//! the determinism properties retrieval guarantees.

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use radrag_core::embedding::{EmbeddingSet, EmbeddingVector};
use radrag_core::index::{top_k, top_k_bruteforce, top_k_sequential, RetrievalResult, VectorIndex};

fn random_index(rng: &mut StdRng, n: usize, dim: usize) -> VectorIndex {
    let values: Vec<f32> = (0..n * dim)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    let ids: Vec<u64> = (0..n as u64).collect();
    VectorIndex::from_embedding_set(EmbeddingSet::new(dim, false, ids, values).unwrap())
}

fn random_query(rng: &mut StdRng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn assert_equivalent(fast: &[RetrievalResult], oracle: &[RetrievalResult]) {
    assert_eq!(fast.len(), oracle.len());
    for (a, b) in fast.iter().zip(oracle) {
        assert_eq!(a.record_id, b.record_id);
        assert_eq!(a.rank, b.rank);
        let tol = 1e-6 * b.score.abs().max(1.0);
        assert!(
            (a.score - b.score).abs() <= tol,
            "{} vs {}",
            a.score,
            b.score
        );
    }
}

#[test]
fn randomized_oracle_sweep() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for round in 0..25 {
        let dim = if round % 2 == 0 { 16 } else { 128 };
        let n = rng.random_range(1..2000);
        let index = random_index(&mut rng, n, dim);
        for _ in 0..4 {
            let query = random_query(&mut rng, dim);
            for k in [1usize, 2, 3, 10] {
                let fast = top_k(&index, &query, k).unwrap();
                let slow = top_k_bruteforce(&index, &query, k).unwrap();
                assert_equivalent(&fast, &slow);
            }
        }
    }
}

#[test]
fn sequential_and_parallel_paths_agree_above_cutover() {
    let mut rng = StdRng::seed_from_u64(42);
    // 6000 rows is past the parallel cutover, so top_k takes the rayon path
    let index = random_index(&mut rng, 6000, 16);
    let query = random_query(&mut rng, 16);
    for k in [1usize, 3, 10, 100] {
        let auto = top_k(&index, &query, k).unwrap();
        let seq = top_k_sequential(&index, &query, k).unwrap();
        let oracle = top_k_bruteforce(&index, &query, k).unwrap();
        assert_equivalent(&auto, &oracle);
        assert_equivalent(&seq, &oracle);
    }
}

#[test]
fn duplicated_vectors_tie_break_by_id_under_permutation() {
    let dim = 8;
    let duplicated: Vec<f32> = vec![0.5; dim];
    let distinct: Vec<f32> = {
        let mut v = vec![0.1; dim];
        v[0] = -0.9;
        v
    };
    // rows: ids 0..6, ids {1, 3, 4} share the duplicated vector
    let rows: Vec<(u64, &Vec<f32>)> = vec![
        (0, &distinct),
        (1, &duplicated),
        (2, &distinct),
        (3, &duplicated),
        (4, &duplicated),
        (5, &distinct),
    ];
    let query = EmbeddingVector::new(vec![1.0; dim]).unwrap();

    let mut permutation: Vec<usize> = (0..rows.len()).collect();
    let mut rng = StdRng::seed_from_u64(9);
    let mut baseline: Option<Vec<u64>> = None;
    for _ in 0..20 {
        // shuffle the file order; ids stay attached to their vectors
        for i in (1..permutation.len()).rev() {
            permutation.swap(i, rng.random_range(0..=i));
        }
        let ids: Vec<u64> = permutation.iter().map(|&i| rows[i].0).collect();
        let values: Vec<f32> = permutation
            .iter()
            .flat_map(|&i| rows[i].1.iter().copied())
            .collect();
        let mut set = EmbeddingSet::new(dim, false, ids, values).unwrap();
        // store in id order as a corpus-aligned build would
        let mut order: Vec<usize> = (0..set.record_ids.len()).collect();
        order.sort_by_key(|&i| set.record_ids[i]);
        let sorted_values: Vec<f32> = order.iter().flat_map(|&i| set.row(i).to_vec()).collect();
        let sorted_ids: Vec<u64> = order.iter().map(|&i| set.record_ids[i]).collect();
        set = EmbeddingSet::new(dim, false, sorted_ids, sorted_values).unwrap();
        let index = VectorIndex::from_embedding_set(set);

        let results = top_k(&index, &query, 3).unwrap();
        let ids: Vec<u64> = results.iter().map(|r| r.record_id).collect();
        assert_eq!(ids, vec![1, 3, 4], "ties must resolve to ascending ids");
        match &baseline {
            None => baseline = Some(ids),
            Some(prev) => assert_eq!(&ids, prev),
        }
    }
}

#[test]
fn repeated_queries_are_identical() {
    let mut rng = StdRng::seed_from_u64(3);
    let index = random_index(&mut rng, 500, 16);
    let query = random_query(&mut rng, 16);
    let first = top_k(&index, &query, 5).unwrap();
    for _ in 0..5 {
        assert_eq!(top_k(&index, &query, 5).unwrap(), first);
    }
}

#[test]
fn normalized_scores_stay_in_unit_range() {
    let mut rng = StdRng::seed_from_u64(11);
    let n = 300;
    let dim = 32;
    let values: Vec<f32> = (0..n * dim)
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    let records = (0..n)
        .map(|i| radrag_core::corpus::CorpusRecord {
            record_id: i as u64,
            study_id: format!("s{i}"),
            level: radrag_core::corpus::CorpusLevel::Sentence,
            text: format!("t{i}."),
            parent_report_id: Some(0),
        })
        .collect();
    let corpus = radrag_core::corpus::Corpus::from_records(
        radrag_core::corpus::CorpusLevel::Sentence,
        records,
    )
    .unwrap();
    let set = EmbeddingSet::new(dim, false, (0..n as u64).collect(), values).unwrap();
    let index = VectorIndex::build(&corpus, &set, true).unwrap();
    let query = random_query(&mut rng, dim).normalize().unwrap();
    for result in top_k(&index, &query, n).unwrap() {
        assert!(result.score <= 1.0 + 1e-6 && result.score >= -1.0 - 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// k results are always a prefix of k+1 results.
    #[test]
    fn results_for_k_prefix_results_for_k_plus_one(
        seed in any::<u64>(),
        n in 1usize..200,
        k in 1usize..20,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let index = random_index(&mut rng, n, 8);
        let query = random_query(&mut rng, 8);
        let smaller = top_k(&index, &query, k).unwrap();
        let larger = top_k(&index, &query, k + 1).unwrap();
        prop_assert_eq!(&larger[..smaller.len()], &smaller[..]);
    }

    /// The fast path never disagrees with the oracle.
    #[test]
    fn oracle_equivalence_property(
        seed in any::<u64>(),
        n in 1usize..300,
        k in 1usize..12,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let index = random_index(&mut rng, n, 8);
        let query = random_query(&mut rng, 8);
        let fast = top_k(&index, &query, k).unwrap();
        let slow = top_k_bruteforce(&index, &query, k).unwrap();
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert_eq!(a.record_id, b.record_id);
            prop_assert!((a.score - b.score).abs() <= 1e-6 * b.score.abs().max(1.0));
        }
    }
}
