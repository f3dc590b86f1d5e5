use crate::tokenizer::{TokenId, Tokenizer};

/// Incremental round-trip checker for a growing token list.
///
/// Encoding is piece-local: a piece boundary in the decoded bytes splits the
/// encoding exactly. The tracker keeps the longest prefix that ends at a
/// closed piece boundary and is known to round-trip, so each query only
/// re-encodes the open trailing piece. Once a closed piece fails, no later
/// token can repair it and every query answers "inconsistent".
#[derive(Debug, Clone)]
pub struct ConsistencyTracker<'t> {
    tk: &'t Tokenizer,
    ids: Vec<TokenId>,
    /// decoded bytes (marker already rendered as space)
    bytes: Vec<u8>,
    /// byte end of each token
    ends: Vec<usize>,
    /// state after each prefix length: (verified tokens, verified bytes, broken)
    snapshots: Vec<State>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct State {
    tokens: usize,
    bytes: usize,
    broken: bool,
}

impl<'t> ConsistencyTracker<'t> {
    pub fn new(tk: &'t Tokenizer) -> Self {
        ConsistencyTracker {
            tk,
            ids: Vec::new(),
            bytes: Vec::new(),
            ends: Vec::new(),
            snapshots: vec![State { tokens: 0, bytes: 0, broken: false }],
        }
    }

    pub fn with_history(tk: &'t Tokenizer, ids: &[TokenId]) -> Self {
        let mut t = Self::new(tk);
        for &id in ids {
            t.push(id);
        }
        t
    }

    pub fn tokenizer(&self) -> &'t Tokenizer {
        self.tk
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn decoded_bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn state(&self) -> State {
        *self.snapshots.last().expect("never empty")
    }

    /// Appends a token. Unknown ids make the tracker permanently inconsistent.
    pub fn push(&mut self, id: TokenId) {
        let mut st = self.state();
        match self.tk.rendered(id) {
            Some(r) => self.bytes.extend_from_slice(r),
            None => st.broken = true,
        }
        self.ids.push(id);
        self.ends.push(self.bytes.len());
        if !st.broken {
            st = self.close_pieces(st);
        }
        self.snapshots.push(st);
    }

    /// Drops tokens so that `len` remain.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.ids.len() {
            return;
        }
        self.ids.truncate(len);
        self.ends.truncate(len);
        self.snapshots.truncate(len + 1);
        self.bytes.truncate(self.ends.last().copied().unwrap_or(0));
    }

    fn close_pieces(&self, mut st: State) -> State {
        loop {
            let rest = self.bytes.get(st.bytes + 1..).unwrap_or(&[]);
            let Some(rel) = rest.iter().position(|&b| b == b' ') else {
                return st;
            };
            let boundary = st.bytes + 1 + rel;
            // first token ending exactly at the boundary
            let j = st.tokens + self.ends[st.tokens..].partition_point(|&e| e < boundary);
            if j >= self.ends.len() || self.ends[j] != boundary {
                // the boundary falls inside a token; that token will be split
                // on re-encoding, and the piece before it is closed for good
                if j < self.ends.len() {
                    st.broken = true;
                }
                return st;
            }
            if !self.region_ok(st.bytes, boundary, &self.ids[st.tokens..=j]) {
                st.broken = true;
                return st;
            }
            st.tokens = j + 1;
            st.bytes = boundary;
        }
    }

    fn region_ok(&self, from: usize, to: usize, ids: &[TokenId]) -> bool {
        encode_bytes(self.tk, &self.bytes[from..to]).is_some_and(|r| r == ids)
    }

    pub fn is_consistent(&self) -> bool {
        let st = self.state();
        !st.broken && self.region_ok(st.bytes, self.bytes.len(), &self.ids[st.tokens..])
    }

    /// Candidate-level check against the current list, without mutating it.
    pub fn is_candidate_level_it(&self, candidate: TokenId) -> bool {
        let st = self.state();
        if st.broken {
            return true;
        }
        let Some(r) = self.tk.rendered(candidate) else { return true };
        let mut tail = Vec::with_capacity(self.bytes.len() - st.bytes + r.len());
        tail.extend_from_slice(&self.bytes[st.bytes..]);
        tail.extend_from_slice(r);
        let Some(enc) = encode_bytes(self.tk, &tail) else { return true };
        let open = &self.ids[st.tokens..];
        !(enc.len() == open.len() + 1 && enc[..open.len()] == *open && enc[open.len()] == candidate)
    }
}

fn encode_bytes(tk: &Tokenizer, bytes: &[u8]) -> Option<Vec<TokenId>> {
    match std::str::from_utf8(bytes) {
        Ok(s) => tk.encode_ids(s).ok(),
        Err(_) => tk.encode_ids(&String::from_utf8_lossy(bytes)).ok(),
    }
}
