use affectlab_core::affect_space::parse_signature;
use affectlab_core::occ_engine::table_rules;
use affectlab_core::prompt_kit::*;
use affectlab_core::stimuli::fixtures;

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn p1_with_clause() {
    assert_eq!(render_sentiment_instruction(true), golden("p1_with_clause.txt"));
}

#[test]
fn p1_without_clause() {
    assert_eq!(render_sentiment_instruction(false), golden("p1_without_clause.txt"));
}

#[test]
fn p2() {
    assert_eq!(render_numeric_mapping_prompt(), golden("p2.txt"));
}

#[test]
fn p3_for_4650() {
    let fx = fixtures();
    let words: Vec<&str> = fx.words20.items.iter().map(|s| s.text.as_str()).collect();
    let situation = &fx.anet20.get("4650").unwrap().text;
    assert_eq!(render_word_pick_prompt(situation, &words).unwrap(), golden("p3_4650.txt"));
}

#[test]
fn p4_first_octant() {
    let o = parse_signature("V+A-D-").unwrap();
    assert_eq!(render_octant_prompt(&o), golden("p4_v+a-d-.txt"));
}

#[test]
fn p5_joy() {
    let text = render_chatocc_prompt(&table_rules(), "Anne just passed her exam.").unwrap();
    assert_eq!(text, golden("p5_joy.txt"));
}

#[test]
fn block_follows_instruction_on_its_own_lines() {
    let fx = fixtures();
    let texts: Vec<&str> = fx.anet20.items.iter().map(|s| s.text.as_str()).collect();
    let full = render_sentiment_prompt(true, &texts).unwrap();
    let expected_head = golden("p1_with_clause.txt") + "\n1. ";
    assert!(full.starts_with(&expected_head));
    assert_eq!(full.lines().count(), 21);
}
