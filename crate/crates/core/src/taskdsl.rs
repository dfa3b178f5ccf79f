//! A small instruction language for rearrangement goals.
//!
//! Object, reference and part phrases are brace-delimited, which keeps the
//! grammar deterministic:
//!
//! ```text
//! instruction := pos | rot | pos "and" rot
//! pos := ("move" | "place" | "put") OBJ REL
//! REL := "to the left of" REF | "to the right of" REF | "in front of" REF
//!      | "behind" REF | "on top of" REF | "between" REF "and" REF
//!      | "in the center of" REF ("and" REF)+
//! rot := "upright" OBJ | "flip" OBJ "upside down"
//!      | ("point" | "turn" | "rotate") "the" PART "of" OBJ "to the" DIR
//! DIR := "left" | "right" | "front" | "back" | "up" | "down"
//! ```
//!
//! Keywords are case-insensitive and any run of whitespace counts as one
//! space. Further `"and" rot` clauses may follow; all clauses must name the
//! same object.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::align::OrientationPair;
use crate::error::{Error, Result};
use crate::geo::UnitVec3;
use crate::scenegraph::{Relation, SceneGraph};
use crate::textenc::normalize_phrase;

/// A world axis direction. "front" is toward the viewer (-y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Dir {
    pub const ALL: [Dir; 6] = [Dir::NegX, Dir::PosX, Dir::NegY, Dir::PosY, Dir::PosZ, Dir::NegZ];

    /// The instruction word for this direction.
    pub fn word(self) -> &'static str {
        match self {
            Dir::NegX => "left",
            Dir::PosX => "right",
            Dir::NegY => "front",
            Dir::PosY => "back",
            Dir::PosZ => "up",
            Dir::NegZ => "down",
        }
    }

    pub fn unit(self) -> UnitVec3 {
        match self {
            Dir::PosX => UnitVec3::X,
            Dir::NegX => UnitVec3::X.neg(),
            Dir::PosY => UnitVec3::Y,
            Dir::NegY => UnitVec3::Y.neg(),
            Dir::PosZ => UnitVec3::Z,
            Dir::NegZ => UnitVec3::Z.neg(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionGoal {
    pub relation: Relation,
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationGoal {
    pub part: String,
    pub dir: Dir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub subject: String,
    pub position: Option<PositionGoal>,
    pub orientation: Option<Vec<OrientationGoal>>,
}

impl GoalSpec {
    pub fn validate(&self) -> Result<()> {
        let has_rot = self.orientation.as_ref().is_some_and(|o| !o.is_empty());
        if self.position.is_none() && !has_rot {
            return Err(Error::invalid("goal has neither a position nor an orientation"));
        }
        if let Some(p) = &self.position {
            p.relation.check_arity(p.refs.len())?;
        }
        let phrases = std::iter::once(&self.subject)
            .chain(self.position.iter().flat_map(|p| &p.refs))
            .chain(self.orientation.iter().flatten().map(|o| &o.part));
        for p in phrases {
            if p.trim().is_empty() || p.contains(['{', '}']) {
                return Err(Error::invalid(format!("invalid phrase {p:?}")));
            }
        }
        Ok(())
    }

    /// Canonical instruction text; parses back to an equal goal.
    pub fn pretty(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for GoalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.subject;
        let mut clauses = Vec::new();
        if let Some(p) = &self.position {
            let r = &p.refs;
            let rel = match p.relation {
                Relation::Left => format!("to the left of {{{}}}", r[0]),
                Relation::Right => format!("to the right of {{{}}}", r[0]),
                Relation::Front => format!("in front of {{{}}}", r[0]),
                Relation::Behind => format!("behind {{{}}}", r[0]),
                Relation::Top => format!("on top of {{{}}}", r[0]),
                Relation::Between => format!("between {{{}}} and {{{}}}", r[0], r[1]),
                Relation::Center => format!(
                    "in the center of {}",
                    r.iter().map(|x| format!("{{{x}}}")).collect::<Vec<_>>().join(" and ")
                ),
            };
            clauses.push(format!("move {{{s}}} {rel}"));
        }
        for o in self.orientation.iter().flatten() {
            clauses.push(match (o.part.as_str(), o.dir) {
                ("top", Dir::PosZ) => format!("upright {{{s}}}"),
                ("top", Dir::NegZ) => format!("flip {{{s}}} upside down"),
                (part, d) => format!("point the {{{part}}} of {{{s}}} to the {}", d.word()),
            });
        }
        f.write_str(&clauses.join(" and "))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Phrase(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '{' {
            chars.next();
            let mut phrase = String::new();
            let mut closed = false;
            for (j, c) in chars.by_ref() {
                match c {
                    '}' => {
                        closed = true;
                        break;
                    }
                    '{' => {
                        return Err(Error::Parse {
                            offset: j,
                            expected: vec!["\"}\"".into()],
                        })
                    }
                    _ => phrase.push(c),
                }
            }
            if !closed {
                return Err(Error::Parse {
                    offset: text.len(),
                    expected: vec!["\"}\"".into()],
                });
            }
            let phrase = phrase.split_whitespace().collect::<Vec<_>>().join(" ");
            if phrase.is_empty() {
                return Err(Error::Parse {
                    offset: i,
                    expected: vec!["{phrase}".into()],
                });
            }
            out.push(Token {
                tok: Tok::Phrase(phrase),
                offset: i,
            });
        } else if c == '}' {
            return Err(Error::Parse {
                offset: i,
                expected: vec!["{phrase}".into()],
            });
        } else {
            let mut end = i;
            while let Some(&(j, c)) = chars.peek() {
                if c.is_whitespace() || c == '{' || c == '}' {
                    break;
                }
                end = j + c.len_utf8();
                chars.next();
            }
            out.push(Token {
                tok: Tok::Word(text[i..end].to_lowercase()),
                offset: i,
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    end: usize,
}

const VERBS: &[(&str, Option<Relation>)] = &[("move", None), ("place", None), ("put", None)];

const RELATIONS: &[(&str, Relation)] = &[
    ("to the left of", Relation::Left),
    ("to the right of", Relation::Right),
    ("in front of", Relation::Front),
    ("behind", Relation::Behind),
    ("on top of", Relation::Top),
    ("between", Relation::Between),
    ("in the center of", Relation::Center),
];

#[derive(Clone, Copy)]
enum RotStart {
    Upright,
    Flip,
    Point,
}

const ROT_STARTS: &[(&str, RotStart)] = &[
    ("upright", RotStart::Upright),
    ("flip", RotStart::Flip),
    ("point", RotStart::Point),
    ("turn", RotStart::Point),
    ("rotate", RotStart::Point),
];

fn quoted(s: &str) -> String {
    format!("\"{s}\"")
}

impl Parser<'_> {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn fail<T>(&self, expected: Vec<String>) -> Result<T> {
        let mut expected = expected;
        expected.dedup();
        Err(Error::Parse {
            offset: self.offset(),
            expected,
        })
    }

    fn peek_word(&self, depth: usize) -> Option<&str> {
        match self.toks.get(self.pos + depth).map(|t| &t.tok) {
            Some(Tok::Word(w)) => Some(w),
            _ => None,
        }
    }

    /// Matches one of several multi-word keywords, longest first.
    fn keyword<T: Copy>(&mut self, table: &[(&str, T)], extra: &[String]) -> Result<T> {
        let mut sorted: Vec<&(&str, T)> = table.iter().collect();
        sorted.sort_by_key(|(k, _)| std::cmp::Reverse(k.split(' ').count()));
        let mut best_depth = 0;
        let mut best: Vec<String> = Vec::new();
        for (k, v) in &sorted {
            let words: Vec<&str> = k.split(' ').collect();
            let matched = words.iter().enumerate().take_while(|(i, w)| self.peek_word(*i) == Some(**w)).count();
            if matched == words.len() {
                self.pos += matched;
                return Ok(*v);
            }
            if matched > best_depth {
                best_depth = matched;
                best.clear();
            }
            if matched == best_depth {
                best.push(quoted(k));
            }
        }
        if best_depth == 0 {
            best.extend(extra.iter().cloned());
        }
        self.pos += best_depth;
        self.fail(best)
    }

    fn word(&mut self, w: &str) -> Result<()> {
        if self.peek_word(0) == Some(w) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(vec![quoted(w)])
        }
    }

    fn words(&mut self, ws: &str) -> Result<()> {
        ws.split(' ').try_for_each(|w| self.word(w))
    }

    fn phrase(&mut self) -> Result<(String, usize)> {
        match self.toks.get(self.pos) {
            Some(Token {
                tok: Tok::Phrase(p),
                offset,
            }) => {
                self.pos += 1;
                Ok((p.clone(), *offset))
            }
            _ => self.fail(vec!["{phrase}".into()]),
        }
    }

    fn relation(&mut self) -> Result<PositionGoal> {
        let relation = self.keyword(RELATIONS, &[])?;
        let mut refs = vec![self.phrase()?.0];
        match relation {
            Relation::Between => {
                self.word("and")?;
                refs.push(self.phrase()?.0);
            }
            Relation::Center => {
                self.word("and")?;
                refs.push(self.phrase()?.0);
                while self.peek_word(0) == Some("and")
                    && matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Phrase(_)))
                {
                    self.pos += 1;
                    refs.push(self.phrase()?.0);
                }
            }
            _ => {}
        }
        Ok(PositionGoal { relation, refs })
    }

    /// Returns the goal and the object phrase with its offset.
    fn rotation(&mut self, start: RotStart) -> Result<(OrientationGoal, String, usize)> {
        Ok(match start {
            RotStart::Upright => {
                let (obj, at) = self.phrase()?;
                let g = OrientationGoal {
                    part: "top".into(),
                    dir: Dir::PosZ,
                };
                (g, obj, at)
            }
            RotStart::Flip => {
                let (obj, at) = self.phrase()?;
                self.words("upside down")?;
                let g = OrientationGoal {
                    part: "top".into(),
                    dir: Dir::NegZ,
                };
                (g, obj, at)
            }
            RotStart::Point => {
                self.word("the")?;
                let (part, _) = self.phrase()?;
                self.word("of")?;
                let (obj, at) = self.phrase()?;
                self.words("to the")?;
                let table: Vec<(&str, Dir)> = Dir::ALL.iter().map(|d| (d.word(), *d)).collect();
                let dir = self.keyword(&table, &[])?;
                (OrientationGoal { part, dir }, obj, at)
            }
        })
    }
}

/// Parses one instruction. Errors carry the byte offset of the offending
/// token and the set of tokens that would have been accepted there.
pub fn parse_instruction(text: &str) -> Result<GoalSpec> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
    };
    let starts: Vec<String> = ROT_STARTS.iter().map(|(k, _)| quoted(k)).collect();
    let mut subject: Option<String> = None;
    let mut position = None;
    let mut orientation = Vec::new();

    let first_is_verb = VERBS.iter().any(|(v, _)| p.peek_word(0) == Some(*v));
    if first_is_verb {
        p.pos += 1;
        subject = Some(p.phrase()?.0);
        position = Some(p.relation()?);
    } else {
        let mut expected: Vec<String> = VERBS.iter().map(|(v, _)| quoted(v)).collect();
        expected.extend(starts.iter().cloned());
        let start = p.keyword(ROT_STARTS, &expected[..VERBS.len()])?;
        let (g, obj, _) = p.rotation(start)?;
        subject = subject.or(Some(obj));
        orientation.push(g);
    }
    while p.pos < toks.len() {
        p.word("and").or_else(|_| p.fail(vec![quoted("and"), "end of input".into()]))?;
        let start = p.keyword(ROT_STARTS, &[])?;
        let (g, obj, at) = p.rotation(start)?;
        let subj = subject.as_deref().expect("subject set by first clause");
        if normalize_phrase(&obj) != normalize_phrase(subj) {
            return Err(Error::Parse {
                offset: at,
                expected: vec![format!("{{{subj}}}")],
            });
        }
        orientation.push(g);
    }
    let goal = GoalSpec {
        subject: subject.expect("subject set by first clause"),
        position,
        orientation: if orientation.is_empty() { None } else { Some(orientation) },
    };
    Ok(goal)
}

/// A goal bound to scene-graph node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGoal {
    pub subject: usize,
    pub relation: Option<Relation>,
    pub refs: Vec<usize>,
    pub orientation: Vec<OrientationPair>,
}

fn bind(graph: &SceneGraph, phrase: &str) -> Result<usize> {
    let want = normalize_phrase(phrase);
    let ids: Vec<usize> = graph
        .nodes
        .iter()
        .filter(|n| normalize_phrase(&n.phrase) == want)
        .map(|n| n.id)
        .collect();
    match ids.as_slice() {
        [id] => Ok(*id),
        [] => Err(Error::UnknownObject {
            phrase: phrase.to_string(),
            available: graph.nodes.iter().map(|n| n.phrase.clone()).collect(),
        }),
        _ => Err(Error::Ambiguous {
            phrase: phrase.to_string(),
            ids,
        }),
    }
}

/// Binds phrases to nodes and turns orientation goals into alignment pairs.
pub fn resolve(goal: &GoalSpec, graph: &SceneGraph) -> Result<ResolvedGoal> {
    goal.validate()?;
    let subject = bind(graph, &goal.subject)?;
    let (relation, refs) = match &goal.position {
        Some(p) => (
            Some(p.relation),
            p.refs.iter().map(|r| bind(graph, r)).collect::<Result<Vec<_>>>()?,
        ),
        None => (None, Vec::new()),
    };
    let node = graph.node(subject)?;
    let orientation = goal
        .orientation
        .iter()
        .flatten()
        .map(|o| {
            let part = normalize_phrase(&o.part);
            let current = node
                .orientations
                .iter()
                .find(|x| normalize_phrase(&x.text) == part)
                .map(|x| x.dir)
                .ok_or_else(|| Error::UnknownPart {
                    object: node.phrase.clone(),
                    part: o.part.clone(),
                })?;
            Ok(OrientationPair::new(o.part.clone(), current, o.dir.unit()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvedGoal {
        subject,
        relation,
        refs,
        orientation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_goal() {
        let g = parse_instruction("move {soccer ball} to the right of {bread}").unwrap();
        assert_eq!(g.subject, "soccer ball");
        let p = g.position.unwrap();
        assert_eq!(p.relation, Relation::Right);
        assert_eq!(p.refs, vec!["bread"]);
        assert!(g.orientation.is_none());
    }

    #[test]
    fn upright_goal() {
        let g = parse_instruction("upright {bottle}").unwrap();
        assert_eq!(
            g.orientation.unwrap(),
            vec![OrientationGoal {
                part: "top".into(),
                dir: Dir::PosZ
            }]
        );
    }

    #[test]
    fn unknown_relation_is_positioned() {
        match parse_instruction("move {a} near {b}") {
            Err(Error::Parse { offset, expected }) => {
                assert_eq!(offset, 9);
                assert_eq!(expected.len(), RELATIONS.len());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn case_and_spacing_are_normalized() {
        let a = parse_instruction("PUT   {a}  In The Center Of {b} and {c}   and {d}").unwrap();
        assert_eq!(a.position.unwrap().refs, vec!["b", "c", "d"]);
    }

    #[test]
    fn center_refs_then_rotation() {
        let g = parse_instruction("move {a} in the center of {b} and {c} and flip {a} upside down").unwrap();
        assert_eq!(g.position.as_ref().unwrap().refs.len(), 2);
        assert_eq!(g.orientation.as_ref().unwrap()[0].dir, Dir::NegZ);
        assert_eq!(parse_instruction(&g.pretty()).unwrap(), g);
    }

    #[test]
    fn mismatched_subject_is_rejected() {
        let e = parse_instruction("move {a} behind {b} and upright {c}").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 32, .. }), "{e:?}");
    }
}
