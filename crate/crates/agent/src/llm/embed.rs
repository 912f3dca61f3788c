//! Offline embedding used when no embedding endpoint is available.

pub const HASHED_EMBEDDING_DIM: usize = 256;
pub const HASHED_EMBEDDING_MODEL: &str = "hashed-bow-256";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed bag of lowercase alphanumeric words, L2-normalised.
///
/// Text without any word maps to a fixed unit vector so every embedding has
/// nonzero norm.
pub fn hashed_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; HASHED_EMBEDDING_DIM];
    let lower = text.to_lowercase();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        v[(fnv1a(word.as_bytes()) % HASHED_EMBEDDING_DIM as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}
