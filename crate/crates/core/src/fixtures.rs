//! Reference configurations and tables shipped with the crate. The CLI
//! falls back to these by file name when a given path does not exist.

const FILES: &[(&str, &str)] = &[
    (
        "composition_tables.json",
        include_str!("../fixtures/composition_tables.json"),
    ),
    ("phase1.json", include_str!("../fixtures/phase1.json")),
    ("phase2.json", include_str!("../fixtures/phase2.json")),
    ("phase3.json", include_str!("../fixtures/phase3.json")),
    ("cpt_stage12.json", include_str!("../fixtures/cpt_stage12.json")),
    ("cpt_stage3.json", include_str!("../fixtures/cpt_stage3.json")),
    ("sft.json", include_str!("../fixtures/sft.json")),
    ("h200.json", include_str!("../fixtures/h200.json")),
    ("b300.json", include_str!("../fixtures/b300.json")),
    ("arena_battles.jsonl", include_str!("../fixtures/arena_battles.jsonl")),
    ("arena_stated.json", include_str!("../fixtures/arena_stated.json")),
];

pub fn get(name: &str) -> Option<&'static str> {
    FILES.iter().find(|(n, _)| *n == name).map(|(_, body)| *body)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    FILES.iter().map(|(n, _)| *n)
}
