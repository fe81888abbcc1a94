//! Constraint phrases and per-hypothesis progress tracking.
//!
//! A [`ConstraintAutomaton`] is a multi-pattern matcher over token ids (trie
//! plus failure links). A [`ConstraintState`] records where a hypothesis sits
//! in that automaton and how many constraint tokens it has been credited with.
//!
//! Credit rules:
//!
//! * a phrase listed `m` times needs `m` occurrences; occurrences of the same
//!   phrase are credited greedily left to right and must not overlap;
//! * different phrases may share stream tokens;
//! * a partial match is credited with its length only while it is the
//!   longest stream suffix that is a proper prefix of a phrase still owed
//!   credit, so breaking a partial match takes its credit away again;
//! * when the set knows which tokens are word pieces that join the next
//!   token, a match only counts if it starts a word, since a phrase glued
//!   onto the end of a preceding piece never appears on the surface.

use std::collections::BTreeMap;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// The constraint phrases of one sentence, as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConstraintSet {
    phrases: Vec<Vec<TokenId>>,
    total_tokens: usize,
    continuation: Option<Arc<[bool]>>,
}

impl ConstraintSet {
    pub fn new(phrases: Vec<Vec<TokenId>>) -> Result<Self> {
        if let Some(i) = phrases.iter().position(Vec::is_empty) {
            return Err(Error::data(format!("constraint phrase {i} is empty")));
        }
        let total_tokens = phrases.iter().map(Vec::len).sum();
        Ok(Self { phrases, total_tokens, continuation: None })
    }

    /// Anchor matches at word starts: `mask[id]` marks tokens that join the
    /// following token when detokenized.
    pub fn with_continuations(mut self, mask: Arc<[bool]>) -> Self {
        self.continuation = Some(mask);
        self
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Encode surface phrases with `vocab`. Phrases may not contain pad, eos
    /// or sep.
    pub fn from_surfaces<S: AsRef<str>>(vocab: &Vocabulary, phrases: &[S]) -> Result<Self> {
        let sp = vocab.specials();
        let encoded = phrases
            .iter()
            .map(|p| {
                let ids = vocab.encode(p.as_ref());
                if ids.iter().any(|&t| t == sp.pad || t == sp.eos || t == sp.sep) {
                    return Err(Error::data(format!("constraint {:?} contains a reserved token", p.as_ref())));
                }
                Ok(ids)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(encoded)?.with_continuations(vocab.continuation_mask()))
    }

    pub fn phrases(&self) -> &[Vec<TokenId>] {
        &self.phrases
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone)]
struct Node {
    children: BTreeMap<TokenId, u32>,
    fail: u32,
    depth: u32,
    /// Unique phrases that end here or at a node on the failure chain.
    outputs: Vec<u16>,
    /// Unique phrases this node is a proper prefix of.
    prefix_of: Vec<u16>,
}

impl Node {
    fn new(depth: u32) -> Self {
        Self { children: BTreeMap::new(), fail: 0, depth, outputs: Vec::new(), prefix_of: Vec::new() }
    }
}

#[derive(Debug, Clone)]
struct UniquePhrase {
    tokens: Vec<TokenId>,
    /// Indices into the original phrase list, in order.
    indices: Vec<usize>,
}

/// Multi-pattern matcher over a [`ConstraintSet`]. Immutable once built.
#[derive(Debug, Clone)]
pub struct ConstraintAutomaton {
    nodes: Vec<Node>,
    unique: Vec<UniquePhrase>,
    total_tokens: u32,
    continuation: Option<Arc<[bool]>>,
}

/// Progress of one hypothesis. Small value type; advancing returns a new one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConstraintState {
    node: u32,
    pos: i32,
    met: SmallVec<[u16; 8]>,
    last_end: SmallVec<[i32; 8]>,
    tokens_met: u32,
    /// Bit `k`: the token `k` positions back (0 = the newest) joins its
    /// successor on the surface.
    glued: u64,
}

impl ConstraintState {
    pub fn tokens_met(&self) -> usize {
        self.tokens_met as usize
    }

    /// Completed count per unique phrase (see [`ConstraintAutomaton::unique_phrases`]).
    pub fn met_counts(&self) -> &[u16] {
        &self.met
    }
}

const ROOT: u32 = 0;

/// Build the matcher for `cs`.
pub fn build_automaton(cs: &ConstraintSet) -> Result<ConstraintAutomaton> {
    ConstraintAutomaton::new(cs)
}

impl ConstraintAutomaton {
    pub fn new(cs: &ConstraintSet) -> Result<Self> {
        let mut unique: Vec<UniquePhrase> = Vec::new();
        for (i, p) in cs.phrases.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::data(format!("constraint phrase {i} is empty")));
            }
            match unique.iter_mut().find(|u| &u.tokens == p) {
                Some(u) => u.indices.push(i),
                None => unique.push(UniquePhrase { tokens: p.clone(), indices: vec![i] }),
            }
        }
        if unique.len() > u16::MAX as usize {
            return Err(Error::data("too many constraint phrases"));
        }

        let mut nodes = vec![Node::new(0)];
        for (u, phrase) in unique.iter().enumerate() {
            let mut cur = ROOT;
            for (d, &tok) in phrase.tokens.iter().enumerate() {
                nodes[cur as usize].prefix_of.push(u as u16);
                cur = match nodes[cur as usize].children.get(&tok) {
                    Some(&next) => next,
                    None => {
                        let next = nodes.len() as u32;
                        nodes.push(Node::new(d as u32 + 1));
                        nodes[cur as usize].children.insert(tok, next);
                        next
                    }
                };
            }
            nodes[cur as usize].outputs.push(u as u16);
        }
        // The root's prefix_of entries describe the empty prefix; they are
        // never credited.
        nodes[ROOT as usize].prefix_of.clear();

        // Breadth-first failure links.
        let mut queue = std::collections::VecDeque::new();
        let root_children: Vec<u32> = nodes[ROOT as usize].children.values().copied().collect();
        for c in root_children {
            nodes[c as usize].fail = ROOT;
            queue.push_back(c);
        }
        while let Some(n) = queue.pop_front() {
            let children: Vec<(TokenId, u32)> = nodes[n as usize].children.iter().map(|(&t, &c)| (t, c)).collect();
            for (tok, child) in children {
                let mut f = nodes[n as usize].fail;
                let fail = loop {
                    if let Some(&next) = nodes[f as usize].children.get(&tok) {
                        break next;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = nodes[f as usize].fail;
                };
                nodes[child as usize].fail = fail;
                let inherited = nodes[fail as usize].outputs.clone();
                nodes[child as usize].outputs.extend(inherited);
                queue.push_back(child);
            }
        }

        Ok(Self { nodes, unique, total_tokens: cs.total_tokens as u32, continuation: cs.continuation.clone() })
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens as usize
    }

    /// Distinct phrases, each with the original indices that spell it.
    pub fn unique_phrases(&self) -> impl Iterator<Item = (&[TokenId], &[usize])> {
        self.unique.iter().map(|u| (u.tokens.as_slice(), u.indices.as_slice()))
    }

    pub fn start(&self) -> ConstraintState {
        let n = self.unique.len();
        ConstraintState {
            node: ROOT,
            pos: 0,
            met: SmallVec::from_elem(0, n),
            last_end: SmallVec::from_elem(-1, n),
            tokens_met: 0,
            glued: 0,
        }
    }

    pub fn is_complete(&self, state: &ConstraintState) -> bool {
        state.tokens_met == self.total_tokens
    }

    /// Original phrase indices credited so far (a multiset: duplicates are
    /// listed once per credited copy).
    pub fn completed(&self, state: &ConstraintState) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.unique.iter().zip(&state.met).flat_map(|(u, &m)| u.indices[..m as usize].iter().copied()).collect();
        out.sort_unstable();
        out
    }

    fn goto(&self, mut node: u32, tok: TokenId) -> u32 {
        loop {
            if let Some(&next) = self.nodes[node as usize].children.get(&tok) {
                return next;
            }
            if node == ROOT {
                return ROOT;
            }
            node = self.nodes[node as usize].fail;
        }
    }

    fn owed(&self, met: &[u16], last_end: &[i32], u: usize, start: i32) -> bool {
        (met[u] as usize) < self.unique[u].indices.len() && start > last_end[u]
    }

    /// Feed one token. Pure: `state` is left untouched.
    pub fn advance(&self, state: &ConstraintState, token: TokenId) -> ConstraintState {
        let node = self.goto(state.node, token);
        let p = state.pos;
        let joins = self.continuation.as_ref().is_some_and(|m| m.get(token as usize).copied().unwrap_or(false));
        let glued = (state.glued << 1) | u64::from(joins);
        // A match of `len` tokens ending here starts a word unless the token
        // just before it is a joining piece.
        let word_start = |len: u32| glued.checked_shr(len).unwrap_or(0) & 1 == 0;
        let mut met = state.met.clone();
        let mut last_end = state.last_end.clone();
        for &u in &self.nodes[node as usize].outputs {
            let u = u as usize;
            let len = self.unique[u].tokens.len() as u32;
            let start = p - len as i32 + 1;
            if word_start(len) && self.owed(&met, &last_end, u, start) {
                met[u] += 1;
                last_end[u] = p;
            }
        }
        let completed: u32 = self.unique.iter().zip(&met).map(|(u, &m)| m as u32 * u.tokens.len() as u32).sum();

        let mut partial = 0;
        let mut n = node;
        while n != ROOT {
            let nd = &self.nodes[n as usize];
            let start = p - nd.depth as i32 + 1;
            if word_start(nd.depth) && nd.prefix_of.iter().any(|&u| self.owed(&met, &last_end, u as usize, start)) {
                partial = nd.depth;
                break;
            }
            n = nd.fail;
        }

        ConstraintState { node, pos: p + 1, met, last_end, tokens_met: completed + partial, glued }
    }

    /// Every token that strictly increases `tokens_met` from `state`:
    /// continuations of active partial matches and first tokens of phrases
    /// still owed. Sorted ascending.
    pub fn forced_tokens(&self, state: &ConstraintState) -> Vec<TokenId> {
        if self.is_complete(state) {
            return Vec::new();
        }
        let mut candidates: Vec<TokenId> = Vec::new();
        let mut n = state.node;
        loop {
            candidates.extend(self.nodes[n as usize].children.keys().copied());
            if n == ROOT {
                break;
            }
            n = self.nodes[n as usize].fail;
        }
        candidates.sort_unstable();
        candidates.dedup();
        candidates.retain(|&t| self.advance(state, t).tokens_met > state.tokens_met);
        candidates
    }

    /// Feed a whole stream from the start state.
    pub fn run(&self, stream: &[TokenId]) -> ConstraintState {
        stream.iter().fold(self.start(), |s, &t| self.advance(&s, t))
    }
}

/// Advance `state` by `token` (free-function form of [`ConstraintAutomaton::advance`]).
pub fn advance(aut: &ConstraintAutomaton, state: &ConstraintState, token: TokenId) -> ConstraintState {
    aut.advance(state, token)
}

pub fn forced_tokens(aut: &ConstraintAutomaton, state: &ConstraintState) -> Vec<TokenId> {
    aut.forced_tokens(state)
}
