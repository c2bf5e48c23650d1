//! Reference implementations used to cross-check the library metrics.
//! Inputs are lowercase words separated by single spaces, so splitting on
//! whitespace matches the library tokenizer.

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Full-table LCS length.
pub fn lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(candidate: &str, references: &[String]) -> f64 {
    let c = words(candidate);
    let mut best = 0.0f64;
    for r in references {
        let r = words(r);
        if c.is_empty() || r.is_empty() {
            continue;
        }
        let l = lcs(&c, &r) as f64;
        // Harmonic mean of l/|c| and l/|r|.
        best = best.max(2.0 * l / (c.len() + r.len()) as f64);
    }
    best
}

fn count(tokens: &[&str], gram: &[&str]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len())
        .filter(|&i| &tokens[i..i + gram.len()] == gram)
        .count()
}

/// Sentence BLEU with clipped counts found by scanning, orders up to
/// `min(4, |c|)`, a 0.1 floor on empty orders above one, and the brevity
/// penalty against the closest reference length (shorter on ties).
pub fn bleu(candidate: &str, references: &[String]) -> f64 {
    let c = words(candidate);
    let refs: Vec<Vec<&str>> = references
        .iter()
        .map(|r| words(r))
        .filter(|r| !r.is_empty())
        .collect();
    if c.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let orders = c.len().min(4);
    let mut product = 1.0f64;
    for n in 1..=orders {
        let mut seen: Vec<&[&str]> = Vec::new();
        let mut clipped = 0usize;
        for i in 0..=c.len() - n {
            let g = &c[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            let ref_max = refs.iter().map(|r| count(r, g)).max().unwrap_or(0);
            clipped += count(&c, g).min(ref_max);
        }
        let total = (c.len() - n + 1) as f64;
        let p = if clipped > 0 {
            clipped as f64 / total
        } else if n == 1 {
            return 0.0;
        } else {
            0.1 / total
        };
        product *= p;
    }
    let mut closest = refs[0].len();
    for r in &refs {
        let d = r.len().abs_diff(c.len());
        let best = closest.abs_diff(c.len());
        if d < best || (d == best && r.len() < closest) {
            closest = r.len();
        }
    }
    let bp = if c.len() > closest {
        1.0
    } else {
        (1.0 - closest as f64 / c.len() as f64).exp()
    };
    bp * product.powf(1.0 / orders as f64)
}
