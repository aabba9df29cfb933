#![allow(dead_code)]

use ucagents::protocol::{CaseImage, MedicalCase, OptionLetter};

pub fn l(c: char) -> OptionLetter {
    OptionLetter::new(c).unwrap()
}

/// A case with `n` options and gold `A`, carrying a small fake image.
pub fn case(id: &str, n: usize) -> MedicalCase {
    let options = (0..n).map(|i| format!("finding number {}", i + 1));
    MedicalCase::new(id, format!("Which finding best explains case {id}?"), options)
        .with_gold(l('A'))
        .with_image(CaseImage::new("image/png", vec![0x89, b'P', b'N', b'G', 1, 2, 3]))
}

pub fn diagnosis(reasoning: &str, answer: char) -> String {
    format!("#Reasoning: {reasoning} #Answer: {answer}")
}

pub fn review(reasoning: &str, answer: char) -> String {
    format!("#Review Reasoning: {reasoning} #Answer: {answer}")
}

pub fn risk(flaws: &str, counter: &str) -> String {
    format!("#Flaws: {flaws} Counter Evidence: {counter}")
}

pub fn inquiry(first: char, second: char) -> String {
    format!(
        "@ To Expert 1 who reviews {first}: Is the risk for {first} decisive?\n@ To Expert 2 who reviews {second}: Is the risk for {second} decisive?"
    )
}

pub fn verdict(reasoning: &str, answer: char) -> String {
    format!("#Final Reasoning: {reasoning} #Final Answer: {answer}")
}
