use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokenize;
use crate::error::{Error, Result};
use crate::rng;

pub const START: &str = "$root";

/// Beyond this nesting depth only the shallowest alternatives are sampled,
/// so recursive grammars always finish.
const DEPTH_CAP: usize = 32;
const EMPTY_RETRIES: usize = 100;

pub const BUILTIN_GRAMMARS: &[(&str, &str)] = &[
    (
        "fastfood-orders",
        include_str!("../../data/grammars/fastfood-orders.json"),
    ),
    (
        "banking-queries",
        include_str!("../../data/grammars/banking-queries.json"),
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub expansion: Vec<String>,
    pub weight: f64,
}

/// Weighted context-free grammar. Nonterminals start with `$`; sampling
/// starts at `$root`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DomainGrammar {
    rules: BTreeMap<String, Vec<Production>>,
}

fn is_nonterminal(s: &str) -> bool {
    s.starts_with('$')
}

fn grammar_err(production: &str, msg: impl Into<String>) -> Error {
    Error::Grammar {
        production: production.to_string(),
        msg: msg.into(),
    }
}

impl DomainGrammar {
    pub fn new(rules: BTreeMap<String, Vec<Production>>) -> Result<Self> {
        let g = Self { rules };
        g.validate()?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rules: BTreeMap<String, Vec<Production>> = serde_json::from_str(text)?;
        Self::new(rules)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("grammar serializes")
    }

    pub fn rules(&self) -> &BTreeMap<String, Vec<Production>> {
        &self.rules
    }

    /// Every terminal token that appears in some expansion.
    pub fn terminals(&self) -> BTreeSet<&str> {
        self.rules
            .values()
            .flatten()
            .flat_map(|p| &p.expansion)
            .filter(|s| !is_nonterminal(s))
            .map(String::as_str)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !self.rules.contains_key(START) {
            return Err(grammar_err(START, "start symbol is not defined"));
        }
        for (name, alts) in &self.rules {
            if !is_nonterminal(name) || name.len() < 2 {
                return Err(grammar_err(name, "nonterminal names must start with '$'"));
            }
            if alts.is_empty() {
                return Err(grammar_err(name, "no alternatives"));
            }
            for (i, p) in alts.iter().enumerate() {
                if !(p.weight.is_finite() && p.weight > 0.0) {
                    return Err(grammar_err(name, format!("alternative {i} has weight {}", p.weight)));
                }
                for sym in &p.expansion {
                    if is_nonterminal(sym) {
                        if !self.rules.contains_key(sym) {
                            return Err(grammar_err(name, format!("alternative {i} references undefined {sym}")));
                        }
                    } else if tokenize(sym) != [sym.as_str()] {
                        return Err(grammar_err(
                            name,
                            format!("terminal {sym:?} is not a single lowercase token"),
                        ));
                    }
                }
            }
        }

        let mut reached = BTreeSet::from([START]);
        let mut stack = vec![START];
        while let Some(n) = stack.pop() {
            for sym in self.rules[n].iter().flat_map(|p| &p.expansion) {
                if is_nonterminal(sym) && reached.insert(sym) {
                    stack.push(sym);
                }
            }
        }
        if let Some(n) = self.rules.keys().find(|n| !reached.contains(n.as_str())) {
            return Err(grammar_err(n, "unreachable from $root"));
        }

        let heights = self.heights();
        if let Some(n) = self.rules.keys().find(|n| !heights.contains_key(n.as_str())) {
            return Err(grammar_err(n, "never terminates"));
        }
        Ok(())
    }

    /// Minimum derivation height of each terminating nonterminal.
    fn heights(&self) -> BTreeMap<&str, usize> {
        let mut h: BTreeMap<&str, usize> = BTreeMap::new();
        loop {
            let mut changed = false;
            for (name, alts) in &self.rules {
                let best = alts.iter().filter_map(|p| self.alt_height(p, &h)).min();
                if let Some(b) = best {
                    if h.get(name.as_str()).is_none_or(|&old| b < old) {
                        h.insert(name, b);
                        changed = true;
                    }
                }
            }
            if !changed {
                return h;
            }
        }
    }

    fn alt_height(&self, p: &Production, h: &BTreeMap<&str, usize>) -> Option<usize> {
        p.expansion
            .iter()
            .filter(|s| is_nonterminal(s))
            .map(|s| h.get(s.as_str()).copied())
            .try_fold(0, |acc, x| x.map(|x| acc.max(x)))
            .map(|m| m + 1)
    }

    fn expand<R: Rng>(
        &self,
        sym: &str,
        depth: usize,
        heights: &BTreeMap<&str, usize>,
        rng: &mut R,
        out: &mut Vec<String>,
    ) {
        if !is_nonterminal(sym) {
            out.push(sym.to_string());
            return;
        }
        let alts = &self.rules[sym];
        let allowed: Vec<&Production> = if depth >= DEPTH_CAP {
            let target = heights[sym];
            alts.iter()
                .filter(|p| self.alt_height(p, heights) == Some(target))
                .collect()
        } else {
            alts.iter().collect()
        };
        let dist = WeightedIndex::new(allowed.iter().map(|p| p.weight)).expect("weights validated");
        let chosen = allowed[dist.sample(rng)];
        for s in &chosen.expansion {
            self.expand(s, depth + 1, heights, rng, out);
        }
    }

    /// One non-empty token sequence drawn from the grammar.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<String>> {
        let heights = self.heights();
        for _ in 0..EMPTY_RETRIES {
            let mut out = Vec::new();
            self.expand(START, 0, &heights, rng, &mut out);
            if !out.is_empty() {
                return Ok(out);
            }
        }
        Err(grammar_err(START, "only derives empty sentences"))
    }
}

/// Parses one of the grammars that ship with the crate.
pub fn builtin_grammar(name: &str) -> Result<DomainGrammar> {
    match BUILTIN_GRAMMARS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => DomainGrammar::from_json(text),
        None => {
            let known: Vec<&str> = BUILTIN_GRAMMARS.iter().map(|(n, _)| *n).collect();
            Err(Error::Input(format!(
                "unknown grammar {name:?}; available: {}",
                known.join(", ")
            )))
        }
    }
}

/// `n` space-joined sentences sampled from `grammar`, deterministic in `seed`.
pub fn generate_domain(grammar: &DomainGrammar, n: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = rng::seeded(rng::derive_seed(seed, "generate"));
    (0..n).map(|_| grammar.sample(&mut rng).map(|t| t.join(" "))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<DomainGrammar> {
        DomainGrammar::from_json(json)
    }

    fn production_of(e: Error) -> String {
        match e {
            Error::Grammar { production, .. } => production,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn builtins_parse() {
        for (name, _) in BUILTIN_GRAMMARS {
            builtin_grammar(name).unwrap();
        }
        let err = builtin_grammar("weather").unwrap_err().to_string();
        assert!(
            err.contains("fastfood-orders") && err.contains("banking-queries"),
            "{err}"
        );
    }

    #[test]
    fn validation_names_production() {
        let missing_root = parse(r#"{"$a": [{"expansion": ["x"], "weight": 1}]}"#).unwrap_err();
        assert_eq!(production_of(missing_root), "$root");

        let undefined = parse(r#"{"$root": [{"expansion": ["$b"], "weight": 1}]}"#).unwrap_err();
        assert_eq!(production_of(undefined), "$root");

        let weight = parse(
            r#"{"$root": [{"expansion": ["$a"], "weight": 1}],
                "$a": [{"expansion": ["x"], "weight": 0}]}"#,
        )
        .unwrap_err();
        assert_eq!(production_of(weight), "$a");

        let unreachable = parse(
            r#"{"$root": [{"expansion": ["x"], "weight": 1}],
                "$orphan": [{"expansion": ["y"], "weight": 1}]}"#,
        )
        .unwrap_err();
        assert_eq!(production_of(unreachable), "$orphan");

        let looping = parse(
            r#"{"$root": [{"expansion": ["$loop"], "weight": 1}],
                "$loop": [{"expansion": ["x", "$loop"], "weight": 1}]}"#,
        )
        .unwrap_err();
        assert_eq!(production_of(looping), "$loop");

        let upper = parse(r#"{"$root": [{"expansion": ["Fries"], "weight": 1}]}"#).unwrap_err();
        assert_eq!(production_of(upper), "$root");
    }

    #[test]
    fn recursion_terminates() {
        let g =
            parse(r#"{"$root": [{"expansion": ["x", "$root"], "weight": 1000}, {"expansion": ["y"], "weight": 1}]}"#)
                .unwrap();
        let s = generate_domain(&g, 5, 3).unwrap();
        assert!(s
            .iter()
            .all(|l| l.ends_with('y') && l.split(' ').count() <= DEPTH_CAP + 1));
    }

    #[test]
    fn empty_only_grammar_errors() {
        let g = parse(r#"{"$root": [{"expansion": [], "weight": 1}]}"#).unwrap();
        assert!(generate_domain(&g, 1, 0).is_err());
        assert!(generate_domain(&g, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn json_round_trip() {
        let g = builtin_grammar("fastfood-orders").unwrap();
        assert_eq!(DomainGrammar::from_json(&g.to_json()).unwrap(), g);
    }
}
