//! Canonical Huffman codes over a candidate pool.

/// Code words for probabilities given in pool order. Symbols with equal
/// length get consecutive codes in pool order.
pub fn canonical_codes(probs: &[f64]) -> Vec<Vec<bool>> {
    let n = probs.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![Vec::new()];
    }
    // two-queue construction; leaves ascending = pool order reversed
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut weight: Vec<f64> = probs.iter().rev().copied().collect();
    let leaf_of = |q: usize| n - 1 - q; // queue slot -> pool index
    let (mut li, mut ii) = (0usize, n);
    let mut next = n;
    let take = |weight: &Vec<f64>, li: &mut usize, ii: &mut usize, next: usize| -> usize {
        let leaf_ok = *li < n;
        let inner_ok = *ii < next;
        if leaf_ok && (!inner_ok || weight[*li] <= weight[*ii]) {
            *li += 1;
            *li - 1
        } else {
            *ii += 1;
            *ii - 1
        }
    };
    while next < 2 * n - 1 {
        let a = take(&weight, &mut li, &mut ii, next);
        let b = take(&weight, &mut li, &mut ii, next);
        weight.push(weight[a] + weight[b]);
        parent[a] = next;
        parent[b] = next;
        next += 1;
    }
    let mut depth = vec![0usize; 2 * n - 1];
    for v in (0..2 * n - 2).rev() {
        depth[v] = depth[parent[v]] + 1;
    }
    let mut lens = vec![0usize; n];
    for q in 0..n {
        lens[leaf_of(q)] = depth[q];
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (lens[i], i));
    let mut codes = vec![Vec::new(); n];
    let mut code: Vec<bool> = Vec::new();
    for (k, &i) in order.iter().enumerate() {
        if k > 0 {
            increment(&mut code);
        }
        code.resize(lens[i], false);
        codes[i] = code.clone();
    }
    codes
}

fn increment(code: &mut [bool]) {
    for b in code.iter_mut().rev() {
        if *b {
            *b = false;
        } else {
            *b = true;
            return;
        }
    }
    unreachable!("canonical code overflow");
}

/// Index of the code word that prefixes `bits` (zero-padded past its end),
/// and the code length.
pub fn match_prefix(codes: &[Vec<bool>], bits: &[bool], from: usize) -> (usize, usize) {
    let bit = |i: usize| bits.get(i).copied().unwrap_or(false);
    codes
        .iter()
        .enumerate()
        .find(|(_, c)| c.iter().enumerate().all(|(k, &b)| bit(from + k) == b))
        .map(|(i, c)| (i, c.len()))
        .expect("a complete prefix code matches every stream")
}
