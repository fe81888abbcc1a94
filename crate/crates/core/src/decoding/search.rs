use super::{allocate_banks, rank, DecodeConfig, DecodeMode, Hypothesis, Scorer};
use crate::constraints::{ConstraintAutomaton, ConstraintSet, ConstraintState};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

struct Candidate {
    parent: usize,
    token: TokenId,
    score: f64,
    state: ConstraintState,
    eos: bool,
}

/// Indices of the `k` most probable tokens (ties to the lower id), skipping eos
/// when it is not admissible.
fn top_tokens(lp: &[f64], k: usize, eos: TokenId, allow_eos: bool) -> Vec<TokenId> {
    let mut idx: Vec<TokenId> = (0..lp.len() as TokenId).filter(|&t| allow_eos || t != eos).collect();
    let k = k.min(idx.len());
    let by_score = |a: &TokenId, b: &TokenId| lp[*b as usize].total_cmp(&lp[*a as usize]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, by_score);
        idx.truncate(k);
    }
    idx.sort_unstable_by(by_score);
    idx
}

fn run(
    scorer: &mut dyn Scorer,
    aut: &ConstraintAutomaton,
    cfg: &DecodeConfig,
    source_len: usize,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let beam = cfg.beam_size;
    let eos = scorer.eos();
    let vocab = scorer.vocab_size();
    let total = aut.total_tokens();
    let n_banks = if cfg.mode == DecodeMode::Plain { 1 } else { total + 1 };
    let max_len = cfg.max_len(source_len).min(scorer.max_prefix_len().saturating_add(1));

    let mut alive = vec![Hypothesis { tokens: Vec::new(), score: 0.0, cstate: aut.start(), finished: false }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut cands: Vec<Candidate> = Vec::new();
        for (pi, h) in alive.iter().enumerate() {
            let lp = scorer.log_probs(&h.tokens)?;
            if lp.len() != vocab {
                return Err(Error::data(format!("scorer returned {} scores for a vocabulary of {vocab}", lp.len())));
            }
            let may_end = !cfg.mode.is_constrained() || aut.is_complete(&h.cstate);
            let mut pool = top_tokens(&lp, beam, eos, may_end);
            if cfg.mode.is_constrained() {
                for f in aut.forced_tokens(&h.cstate) {
                    if !pool.contains(&f) {
                        pool.push(f);
                    }
                }
            }
            for t in pool {
                let score = h.score + lp[t as usize];
                if !score.is_finite() {
                    continue;
                }
                let is_eos = t == eos;
                let state = if is_eos { h.cstate.clone() } else { aut.advance(&h.cstate, t) };
                cands.push(Candidate { parent: pi, token: t, score, state, eos: is_eos });
            }
        }
        if cands.is_empty() {
            break;
        }

        let bank_of = |c: &Candidate| if n_banks == 1 { 0 } else { c.state.tokens_met() };
        let mut banks: Vec<Vec<Candidate>> = (0..n_banks).map(|_| Vec::new()).collect();
        for c in cands {
            let b = bank_of(&c);
            banks[b].push(c);
        }
        for bank in &mut banks {
            bank.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then_with(|| alive[a.parent].tokens.cmp(&alive[b.parent].tokens))
                    .then(a.token.cmp(&b.token))
            });
        }
        let quota: Vec<usize> = match cfg.mode {
            DecodeMode::Dba => allocate_banks(beam, &banks.iter().map(Vec::len).collect::<Vec<_>>()),
            _ => vec![beam; n_banks],
        };

        let mut next = Vec::new();
        for (bank, q) in banks.into_iter().zip(quota) {
            for c in bank.into_iter().take(q) {
                let parent = &alive[c.parent];
                let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
                tokens.extend_from_slice(&parent.tokens);
                tokens.push(c.token);
                let h = Hypothesis { tokens, score: c.score, cstate: c.state, finished: c.eos };
                if c.eos {
                    finished.push(h);
                } else {
                    next.push(h);
                }
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }

    let alpha = cfg.length_penalty;
    let best_of = |hs: &[Hypothesis]| -> Option<Hypothesis> {
        hs.iter()
            .min_by(|a, b| rank(a.normalized_score(alpha), &a.tokens, b.normalized_score(alpha), &b.tokens))
            .cloned()
    };
    if let Some(best) = best_of(&finished) {
        return Ok(best);
    }
    if cfg.mode == DecodeMode::Plain {
        return best_of(&alive).ok_or_else(|| Error::data("beam search produced no hypothesis"));
    }
    // Hit the length cap: a hypothesis that met every constraint is returned
    // unfinished rather than treated as a failure.
    let complete: Vec<Hypothesis> = alive.iter().filter(|h| aut.is_complete(&h.cstate)).cloned().collect();
    if let Some(best) = best_of(&complete) {
        return Ok(best);
    }
    let best = alive
        .iter()
        .min_by(|a, b| {
            b.tokens_met()
                .cmp(&a.tokens_met())
                .then_with(|| rank(a.normalized_score(alpha), &a.tokens, b.normalized_score(alpha), &b.tokens))
        })
        .cloned()
        .unwrap_or_else(|| Hypothesis { tokens: Vec::new(), score: 0.0, cstate: aut.start(), finished: false });
    let met = best.tokens_met();
    Err(Error::ConstraintFailure { best: Box::new(best), met, total })
}

/// Unconstrained beam search. When nothing finishes within the length cap
/// the best unfinished hypothesis is returned with `finished == false`.
pub fn beam_search(scorer: &mut dyn Scorer, source_len: usize, cfg: &DecodeConfig) -> Result<Hypothesis> {
    let aut = ConstraintAutomaton::new(&ConstraintSet::empty())?;
    let cfg = DecodeConfig { mode: DecodeMode::Plain, ..cfg.clone() };
    run(scorer, &aut, &cfg, source_len)
}

/// Grid beam search: one bank of `beam_size` per number of constraint tokens met.
pub fn gbs_decode(
    scorer: &mut dyn Scorer,
    source_len: usize,
    cs: &ConstraintSet,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let aut = ConstraintAutomaton::new(cs)?;
    let cfg = DecodeConfig { mode: DecodeMode::Gbs, ..cfg.clone() };
    run(scorer, &aut, &cfg, source_len)
}

/// Dynamic beam allocation: one beam of `beam_size` split across progress banks.
pub fn dba_decode(
    scorer: &mut dyn Scorer,
    source_len: usize,
    cs: &ConstraintSet,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let aut = ConstraintAutomaton::new(cs)?;
    let cfg = DecodeConfig { mode: DecodeMode::Dba, ..cfg.clone() };
    run(scorer, &aut, &cfg, source_len)
}

/// Dispatch on `cfg.mode`. Plain search ignores the constraints but still
/// tracks them, so the result reports how many constraint tokens it met.
pub fn decode(
    scorer: &mut dyn Scorer,
    source_len: usize,
    cs: &ConstraintSet,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    match cfg.mode {
        DecodeMode::Plain => run(scorer, &ConstraintAutomaton::new(cs)?, cfg, source_len),
        DecodeMode::Gbs => gbs_decode(scorer, source_len, cs, cfg),
        DecodeMode::Dba => dba_decode(scorer, source_len, cs, cfg),
    }
}
