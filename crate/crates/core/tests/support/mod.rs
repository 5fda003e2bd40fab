//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use agentrank_core::policy::{Policy, ScriptedPolicy, TransportError};
use agentrank_core::protocol::{ChatMessage, MainTurn, Action, RankerTurn, Violation};
use agentrank_core::retrieval::Document;
use agentrank_core::rollout::Question;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

/// A printed grouping block: initial query and (cluster, sub-query) rows.
pub struct Block {
    pub initial: &'static str,
    pub rows: &'static [(usize, &'static str)],
}

/// Ten blocks of the first grouping table, then ten of the second.
pub const BLOCKS: &[Block] = &[
    Block {
        initial: "who has played the most state of origins",
        rows: &[
            (0, "who has played the most state of origins"),
            (1, "current record holder for most State of Origin appearances"),
            (2, "most State of Origin appearances"),
            (2, "most appearances in State of Origin"),
        ],
    },
    Block {
        initial: "what is the host nation of the 2004 summer olympic g...",
        rows: &[
            (0, "host nation of 2004 Summer Olympic Games"),
            (1, "host nation of 2004 Summer Olympics"),
            (1, "host nation of the 2004 Summer Olympics"),
        ],
    },
    Block {
        initial: "What is the birth city of Blessed John the Fool-For-...",
        rows: &[
            (0, "capital of former Soviet Union and country with AGT show"),
            (0, "capital of the former Soviet Union and country with AGT"),
            (1, "Blessed John the Fool-For-Christ birth city"),
            (1, "Blessed John the Fool-For-Christ birth city Azerbaijan"),
            (1, "Blessed John the Fool-For-Christ birth city Baku Azerbaijan"),
        ],
    },
    Block {
        initial: "What race is the majority of the population of the c...",
        rows: &[
            (0, "The Unbeatables I production country"),
            (1, "The Unbeatables I"),
            (1, "The Unbeatables I produced"),
        ],
    },
    Block {
        initial: "Who plays the writer who mentioned The Angel Pub in ...",
        rows: &[
            (0, "Charles Dickens The Angel Pub"),
            (0, "Charles Dickens The Angel Pub writings"),
            (0, "Charles Dickens mentioned The Angel Pub"),
            (1, "The Man Who Invented Christmas"),
        ],
    },
    Block {
        initial: "Are Naked Obsession and New York (1916 Film) from th...",
        rows: &[
            (0, "Naked Obsession"),
            (1, "New York (1916 Film)"),
        ],
    },
    Block {
        initial: "Standard Chartered Bank, who sponsors the annual Hon...",
        rows: &[
            (0, "Standard Chartered Bank headquarters"),
            (1, "Standard Chartered Bank sponsors Hong Kong Marathon"),
        ],
    },
    Block {
        initial: "on what day of the year is the sun near the star reg...",
        rows: &[
            (0, "when is the sun near Regulus (Alpha Leo) on the calendar"),
            (0, "when is the sun near Regulus (Alpha Leo) on the exact date"),
            (0, "when is the sun near Regulus (Alpha Leo) on the year"),
            (1, "day of the year when the sun is near Regulus (Alpha Leo)"),
            (1, "day of the year when the sun is near Regulus (alpha leo)"),
            (1, "exact day of the year when the Sun is near Regulus (Alpha Leo)"),
        ],
    },
    Block {
        initial: "who did the congress send to london as a minister in...",
        rows: &[
            (0, "who did the congress send to london as a minister in 1784"),
            (1, "who was sent as a minister to london by the congress in 1784"),
            (1, "who was sent as a minister to london in 1784"),
            (1, "who was sent as minister to london by congress in 1784"),
        ],
    },
    Block {
        initial: "In what season of the 2017 year is the Netflix Germa...",
        rows: &[
            (0, "Dark (TV series) 2017 release season"),
            (0, "Dark (TV series) release schedule 2017"),
            (1, "Dark (Netflix German series) season release"),
            (1, "Dark Netflix German series 2017 release season"),
            (1, "Dark Netflix German series release season"),
        ],
    },
    Block {
        initial: "What part did The King of Hollywood play in China Seas?",
        rows: &[
            (0, "The King of Hollywood China Seas"),
            (0, "The King of Hollywood China Seas part"),
            (1, "Clark Gable role in China Seas"),
            (1, "Clark Gable's role in China Seas"),
        ],
    },
    Block {
        initial: "What is the Izzo (H.O.V.A.) performer's record label?",
        rows: &[
            (0, "Izzo (H.O.V.A.) performer record label"),
            (1, "Jay-Z current record label"),
            (1, "Jay-Z record label"),
        ],
    },
    Block {
        initial: "Where was the place of death of the director of film...",
        rows: &[
            (0, "director of film When A Man Sees Red 1934"),
            (0, "director of film When A Man Sees Red 1934 Pursued"),
            (0, "director of film When A Man Sees Red 1934 version"),
            (1, "Frank Ellis death place"),
            (1, "Frank Ellis place of death"),
            (1, "place of death Frank Ellis"),
        ],
    },
    Block {
        initial: "Who was born later, Dani Pacheco or Agnė Čepelytė?",
        rows: &[
            (0, "Dani Pacheco birth year"),
            (1, "Agnė Čepelytė birth year"),
        ],
    },
    Block {
        initial: "Who is the operator of Embassy of Northern Cyprus in...",
        rows: &[
            (0, "Embassy of Northern Cyprus in Istanbul operator"),
            (0, "Embassy of Northern Cyprus in Kemerhisar operator"),
            (0, "Embassy of Northern Cyprus in Samsun operator"),
        ],
    },
    Block {
        initial: "What town has an island with a community building bu...",
        rows: &[
            (0, "island with community building built 1911-12"),
            (0, "town with an island and a community building built in 1911-12"),
            (0, "town with island and community building built in 1911-12"),
        ],
    },
    Block {
        initial: "The M66 is a motorway in Lancashire and Greater Manc...",
        rows: &[
            (0, "M66 motorway in Lancashire and Greater Manchester"),
            (0, "M66 motorway in Lancashire and Greater Manchester, England"),
        ],
    },
    Block {
        initial: "who plays the queen of hearts in alice and wonderland",
        rows: &[
            (0, "who plays the Queen of Hearts in Alice and Wonderland"),
            (0, "who plays the Queen of Hearts in Alice in Wonderland"),
            (0, "who plays the Queen of Hearts in recent Alice in Wonderland films"),
        ],
    },
    Block {
        initial: "What nationality is the director of film Porky'S Rev...",
        rows: &[
            (1, "James Komack nationality"),
        ],
    },
    Block {
        initial: "What presenter of Market Kitchen has won a Guild of ...",
        rows: &[
            (0, "Market Kitchen presenter Guild of Food Writers award"),
            (0, "Market Kitchen presenter who won Guild of Food Writers award"),
            (0, "Market Kitchen presenter won Guild of Food Writers award"),
        ],
    },
];

/// Blocks of the second table whose printed labels greedy clustering cannot
/// reproduce: one needs articles dropped, the other is a lone row labelled 1.
pub const UNREPRODUCIBLE: [usize; 2] = [15, 18];

pub const SEARCH_TURN: &str =
    r#"<reason>I should look this up.</reason><tool_call>{"name":"search","arguments":{"query":"{question}"}}</tool_call>"#;
pub const REFINE_TURN: &str =
    r#"<reason>Let me refine the search.</reason><tool_call>{"name":"search","arguments":{"query":"{question} keeper"}}</tool_call>"#;
pub const ANSWER_TURN: &str = "<reason>The first document names it.</reason><answer>{top_title}</answer>";

pub fn one_search_script() -> ScriptedPolicy {
    ScriptedPolicy::new([SEARCH_TURN, ANSWER_TURN])
}

pub fn two_search_script() -> ScriptedPolicy {
    ScriptedPolicy::new([SEARCH_TURN, REFINE_TURN, ANSWER_TURN])
}

/// Ranker that always returns the first `k` candidates in order.
pub fn identity_ranker(k: usize) -> ScriptedPolicy {
    let list: Vec<String> = (1..=k).map(|i| format!("[{i}]")).collect();
    ScriptedPolicy::new([format!("<reason>Keep retriever order.</reason><rerank>{}</rerank>", list.join(" > "))])
}

/// Routes each conversation to a script chosen by its question.
pub struct PerQuestion {
    pub scripts: BTreeMap<String, ScriptedPolicy>,
}

impl Policy for PerQuestion {
    fn generate(&self, messages: &[ChatMessage]) -> Result<String, TransportError> {
        let q = messages
            .first()
            .and_then(|m| m.content.lines().rev().find_map(|l| l.strip_prefix("Question: ")))
            .unwrap_or_default();
        self.scripts
            .get(q)
            .ok_or(TransportError::ScriptExhausted { turn: 0 })?
            .generate(messages)
    }
}

const TOPICS: [&str; 20] = [
    "Aldmere", "Brightwater", "Caldor", "Dunmoor", "Eastwick", "Fallowby", "Glenhart", "Harrowgate",
    "Ironvale", "Jesmond", "Kelthorne", "Lindqvist", "Marsden", "Northby", "Oakridge", "Pendleton",
    "Quarrington", "Ravensby", "Stonemere", "Thornbury",
];
const ADJECTIVES: [&str; 10] = ["Amber", "Cobalt", "Crimson", "Dusky", "Ember", "Frost", "Golden", "Hollow", "Ivory", "Jade"];
const NOUNS: [&str; 2] = ["Heron", "Falcon"];

/// Retriever rank (1-based) of each planted answer document.
pub const PLANTED_RANKS: [usize; 20] = [6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 6, 7, 8, 9, 6, 7, 8, 6, 7, 6];
pub const CORPUS_SIZE: usize = 200;

pub struct GapFixture {
    pub corpus: Vec<Document>,
    pub questions: Vec<Question>,
}

/// 200 documents and 20 questions. For each question, `rank - 1` distractor
/// documents repeat the question's topic word and outrank the document that
/// holds the answer; filler documents pad the corpus.
pub fn gap_fixture() -> GapFixture {
    let mut corpus = Vec::new();
    let mut questions = Vec::new();
    for (i, (&topic, &rank)) in TOPICS.iter().zip(&PLANTED_RANKS).enumerate() {
        let answer = format!("{} {}", ADJECTIVES[i % 10], NOUNS[i / 10]);
        for j in 1..rank {
            corpus.push(Document {
                id: format!("q{i:02}-d{j:02}"),
                title: format!("{topic} ledger notes {j}"),
                text: format!("{topic} ledger archive. The {topic} ledger lists {topic} ledger entries for every season."),
            });
        }
        corpus.push(Document {
            id: format!("q{i:02}-answer"),
            title: answer.clone(),
            text: format!("The {topic} ledger is kept by {answer} at the old mill."),
        });
        questions.push(Question {
            id: format!("q{i:02}"),
            question: format!("who keeps the {topic} ledger"),
            golden_answers: vec![answer],
            dataset: Some(if i % 2 == 0 { "ledgers-a" } else { "ledgers-b" }.to_owned()),
        });
    }
    let mut j = 0;
    while corpus.len() < CORPUS_SIZE {
        corpus.push(Document {
            id: format!("filler-{j:03}"),
            title: format!("Almanac entry {j}"),
            text: format!("Weather notes and harvest records for year {}.", 1900 + j),
        });
        j += 1;
    }
    GapFixture { corpus, questions }
}

/// What a fuzz case was built to trigger.
#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub text: String,
    pub ranker: bool,
    pub expected: Violation,
    pub mutation: &'static str,
}

const WORDS: [&str; 12] = ["alpha", "river", "castle", "year", "born", "film", "record", "town", "island", "1911-12", "Harpswell", "label"];

fn phrase(rng: &mut StdRng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_main_turn(rng: &mut StdRng) -> MainTurn {
    let reason = phrase(rng, 1, 12);
    let action = if rng.gen_bool(0.5) {
        Action::ToolCall { query: phrase(rng, 1, 6) }
    } else {
        Action::Answer { text: phrase(rng, 1, 4) }
    };
    MainTurn { reason, action }
}

pub fn random_ranker_turn(rng: &mut StdRng, n: usize, k: usize) -> RankerTurn {
    let mut idx: Vec<usize> = (1..=n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    RankerTurn { reason: phrase(rng, 1, 12), ranking: idx }
}

fn delete_tag(rng: &mut StdRng, text: &str, tags: &[&str]) -> String {
    let present: Vec<String> = tags
        .iter()
        .flat_map(|t| [format!("<{t}>"), format!("</{t}>")])
        .filter(|t| text.contains(t.as_str()))
        .collect();
    let victim = present.choose(rng).unwrap();
    text.replacen(victim.as_str(), "", 1)
}

fn stray_text(rng: &mut StdRng, text: &str, close_tags: &[&str]) -> String {
    let junk = ["Sure!", "Answer follows.", "ok", "Note: see above", "..."].choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => format!("{junk} {text}"),
        1 => format!("{text}\n{junk}"),
        _ => {
            let tag = close_tags.iter().find(|t| text.contains(**t)).unwrap();
            text.replacen(tag, &format!("{tag} {junk} "), 1)
        }
    }
}

/// A valid-then-mutated agent turn with the violation it must produce.
pub fn mutate_main(rng: &mut StdRng) -> FuzzCase {
    let mut turn = random_main_turn(rng);
    let kinds: &[&str] = if matches!(turn.action, Action::ToolCall { .. }) {
        &["tag-deletion", "stray-text", "schema-keys", "bad-json"]
    } else {
        &["tag-deletion", "stray-text", "empty-answer"]
    };
    let kind = *kinds.choose(rng).unwrap();
    let (text, expected) = match kind {
        "tag-deletion" => (delete_tag(rng, &turn.to_text(), &["reason", "tool_call", "answer"]), Violation::MissingTags),
        "stray-text" => (stray_text(rng, &turn.to_text(), &["</reason>", "</tool_call>", "</answer>"]), Violation::ExtraText),
        "empty-answer" => {
            turn.action = Action::Answer { text: String::new() };
            (turn.to_text(), Violation::MissingTags)
        }
        "bad-json" => {
            let t = turn.to_text();
            let end = t.find("</tool_call>").unwrap();
            let cut = rng.gen_range(1..6);
            (format!("{}{}", &t[..end - cut], &t[end..]), Violation::BadJson)
        }
        _ => {
            let Action::ToolCall { query } = &turn.action else { unreachable!() };
            let call = match rng.gen_range(0..5) {
                0 => serde_json::json!({"name": "search", "arguments": {"query": query}, "id": 1}),
                1 => serde_json::json!({"name": "search", "arguments": {"query": query, "top_k": 5}}),
                2 => serde_json::json!({"name": "lookup", "arguments": {"query": query}}),
                3 => serde_json::json!({"name": "search", "arguments": {"q": query}}),
                _ => serde_json::json!({"name": "search", "arguments": {"query": 42}}),
            };
            (format!("<reason>{}</reason>\n<tool_call>{call}</tool_call>", turn.reason), Violation::BadSchema)
        }
    };
    FuzzCase { text, ranker: false, expected, mutation: kind }
}

/// A valid-then-mutated ranker turn over `n` candidates with `k` required.
pub fn mutate_ranker(rng: &mut StdRng, n: usize, k: usize) -> FuzzCase {
    let mut turn = random_ranker_turn(rng, n, k);
    let kind = *["tag-deletion", "stray-text", "index-duplication", "index-range", "wrong-count"]
        .choose(rng)
        .unwrap();
    let (text, expected) = match kind {
        "tag-deletion" => (delete_tag(rng, &turn.to_text(), &["reason", "rerank"]), Violation::MissingTags),
        "stray-text" => (stray_text(rng, &turn.to_text(), &["</reason>", "</rerank>"]), Violation::ExtraText),
        "index-duplication" => {
            let src = rng.gen_range(0..k);
            if k == 1 {
                turn.ranking.push(turn.ranking[0]);
            } else {
                let mut dst = rng.gen_range(0..k);
                if dst == src {
                    dst = (dst + 1) % k;
                }
                turn.ranking[dst] = turn.ranking[src];
            }
            (turn.to_text(), Violation::DupIndex)
        }
        "index-range" => {
            let at = rng.gen_range(0..k);
            turn.ranking[at] = if rng.gen_bool(0.3) { 0 } else { n + rng.gen_range(1..100) };
            (turn.to_text(), Violation::RangeIndex)
        }
        _ => {
            if rng.gen_bool(0.5) || k == n {
                turn.ranking.truncate(rng.gen_range(0..k));
            } else {
                let extra = (1..=n).find(|i| !turn.ranking.contains(i)).unwrap();
                turn.ranking.push(extra);
            }
            (turn.to_text(), Violation::WrongCount)
        }
    };
    FuzzCase { text, ranker: true, expected, mutation: kind }
}

pub const EXAMPLE1_RANKER_OUTPUT: &str = "<reason>\nThe Initial Query asks for a town with an island that has a community building built in\n1911-12. Passage [1] directly mentions a community building built in 1911-12 and locates\nit on Harpswell Island Road, making it the top choice. Passage [48] also fits the criteria\nbut contains less detailed information. Passages [2], [32] discuss islands but do not\nmention a community building from that period. Passage [39] describes a small island with\nno matching structure.\n</reason>\n<rerank>[1] > [48] > [2] > [32] > [39]</rerank>";
