use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ragbias_core::corpus::Chunk;
use ragbias_core::index::{self, EmbeddingVector, Index};

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<EmbeddingVector> {
    (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap())
        .collect()
}

fn chunks(n: usize) -> Vec<Chunk> {
    (0..n)
        .map(|i| Chunk {
            chunk_id: format!("doc{}-{}", i / 4, i % 4),
            doc_id: format!("doc{}", i / 4),
            ordinal: i % 4,
            word_count: 3,
            text: format!("chunk number {i}"),
        })
        .collect()
}

#[test]
fn ten_thousand_chunk_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let vectors = random_vectors(&mut rng, n, 64);
    let idx = Index::build(&chunks(n), &vectors).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.rbix");
    index::persist(&idx, &path).unwrap();
    let loaded = index::load(&path).unwrap();
    assert_eq!(loaded.len(), n);
    for q in random_vectors(&mut rng, 20, 64) {
        let a = idx.search("q", &q, 5).unwrap();
        let b = loaded.search("q", &q, 5).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
    let again = dir.path().join("again.rbix");
    index::persist(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert!(start.elapsed().as_secs_f64() < 5.0, "took {:?}", start.elapsed());
}

#[test]
fn corrupted_file_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let idx = Index::build(&chunks(8), &random_vectors(&mut rng, 8, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.rbix");
    index::persist(&idx, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    assert!(index::load(&path).is_err());
}
