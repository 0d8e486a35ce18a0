//! The knowledge list on its own: adding insights, a reflective prune,
//! rejected answers and cap enforcement.
//!
//! cargo run -p trt --example knowledge_list

use trt::domain::{EntryId, KnowledgeList, PruneReason};

fn main() {
    let mut k = KnowledgeList::new();
    k.add("Do not count the empty set as a valid selection", 1);
    k.add("Avoid summing over residues before fixing the modulus", 1);
    k.add("Do not treat rotations as distinct colorings", 2);
    k.prune(EntryId(2), 2, PruneReason::Reflective).unwrap();
    k.reject_answer(113);
    println!("{}\n({} proxy tokens)\n", k.render(), k.token_len());

    let evicted = k.enforce_cap(12, 3);
    println!("cap of 12 tokens evicted {evicted:?}:\n{}", k.render());
}
