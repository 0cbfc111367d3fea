//! Frozen outputs of the Python oracles next to this file.

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Reference sets of the CIDEr-D oracle corpus, one per item.
pub fn cider_corpus() -> Vec<Vec<Vec<String>>> {
    vec![
        vec![words("a cat sits on the mat"), words("there is a cat on the mat")],
        vec![words("a dog runs in the park"), words("the dog is running outside")],
        vec![words("two birds fly over the lake")],
        vec![words("the committee approved the budget")],
        vec![words("green frogs sing loudly")],
    ]
}

/// `(case, item, hypothesis, score)` from cider_d.py.
pub const CIDER_CASES: [(&str, usize, &str, f64); 6] = [
    ("identical", 0, "a cat sits on the mat", 6.866253730649445),
    ("partial", 0, "the cat is on the mat", 3.5547015677328697),
    ("short", 1, "a dog", 1.5245635734430172),
    ("disjoint", 2, "budget committee approved", 0.0),
    ("single_ref_identical", 4, "green frogs sing loudly", 10.0),
    ("zero_idf_unigram", 3, "the budget", 2.3968592278939997),
];

/// rs_parity.py: data symbol i is (3i + 5) mod 32.
pub fn rs_data() -> Vec<u8> {
    (0..23).map(|i| ((3 * i + 5) % 32) as u8).collect()
}

pub const RS_GENERATOR: [u8; 9] = [1, 8, 21, 15, 6, 2, 26, 18, 5];
pub const RS_PARITY: [u8; 8] = [23, 16, 13, 30, 19, 15, 9, 5];
