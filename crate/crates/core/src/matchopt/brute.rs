//! Exhaustive enumeration of admissible matchings for small problems.

use super::constraints::MatchProblem;
use super::{objective_of, MatchError, MatchObjective};

pub const MAX_TREATED: usize = 8;
pub const MAX_CONTROLS: usize = 10;

/// Maximum bipartite matching size (augmenting paths).
fn max_cardinality(problem: &MatchProblem) -> usize {
    fn augment(p: &MatchProblem, t: usize, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for c in 0..p.n_controls() {
            if p.is_admissible(t, c) && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(p, o, seen, owner)) {
                    owner[c] = Some(t);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; problem.n_controls()];
    (0..problem.n_treated())
        .filter(|&t| augment(problem, t, &mut vec![false; problem.n_controls()], &mut owner))
        .count()
}

type Key = (MatchObjective, Vec<(String, String)>);

struct Search<'a> {
    problem: &'a MatchProblem,
    allowed_unmatched: usize,
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Option<(Key, Vec<(usize, usize)>)>,
}

impl Search<'_> {
    fn visit(&mut self, t: usize, unmatched: usize) {
        if unmatched > self.allowed_unmatched {
            return;
        }
        let p = self.problem;
        if t == p.n_treated() {
            let mut ids: Vec<(String, String)> =
                self.current.iter().map(|&(t, c)| (p.treated_ids[t].clone(), p.control_ids[c].clone())).collect();
            ids.sort();
            let key = (objective_of(p, &self.current), ids);
            if self.best.as_ref().is_none_or(|(b, _)| key < *b) {
                self.best = Some((key, self.current.clone()));
            }
            return;
        }
        for c in 0..p.n_controls() {
            if !self.used[c] && p.is_admissible(t, c) {
                self.used[c] = true;
                self.current.push((t, c));
                self.visit(t + 1, unmatched);
                self.current.pop();
                self.used[c] = false;
            }
        }
        self.visit(t + 1, unmatched + 1);
    }
}

pub(crate) fn enumerate(problem: &MatchProblem) -> Result<Vec<(usize, usize)>, MatchError> {
    if problem.n_treated() > MAX_TREATED || problem.n_controls() > MAX_CONTROLS {
        return Err(MatchError::TooLarge { treated: problem.n_treated(), controls: problem.n_controls() });
    }
    let mut search = Search {
        problem,
        allowed_unmatched: problem.n_treated() - max_cardinality(problem),
        used: vec![false; problem.n_controls()],
        current: Vec::new(),
        best: None,
    };
    search.visit(0, 0);
    Ok(search.best.map(|(_, pairs)| pairs).unwrap_or_default())
}
