use super::{ContextResponsePair, DialogueSession, PairOrigin};

/// Cuts a session at its last `k` turn boundaries.
///
/// Pair `j` (1-based) takes utterance `m - j + 1` as the response and the
/// `m - j` earlier utterances as context. `k` is clamped to `m - 1` so every
/// pair keeps at least one context utterance; sessions shorter than two
/// turns yield nothing.
pub fn augment_fine_grained(session: &DialogueSession, k: usize) -> Vec<ContextResponsePair> {
    let m = session.utterances.len();
    if m < 2 {
        log::debug!("skipping session {:?}: {} utterance(s)", session.id, m);
        return Vec::new();
    }
    let k_eff = k.min(m - 1);
    (1..=k_eff)
        .map(|j| ContextResponsePair {
            session: session.id.clone(),
            context: session.utterances[..m - j].to_vec(),
            response: session.utterances[m - j].clone(),
            label: 1,
            origin: if j == 1 {
                PairOrigin::Original
            } else {
                PairOrigin::Augmented
            },
        })
        .collect()
}

/// Augmented pairs for every session, in session order.
pub fn build_train_set(sessions: &[DialogueSession], k: usize) -> Vec<ContextResponsePair> {
    let mut skipped = 0usize;
    let out: Vec<_> = sessions
        .iter()
        .flat_map(|s| {
            if s.utterances.len() < 2 {
                skipped += 1;
            }
            augment_fine_grained(s, k)
        })
        .collect();
    if skipped > 0 {
        log::warn!("skipped {skipped} session(s) with fewer than two utterances");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;

    fn session(n: usize) -> DialogueSession {
        DialogueSession {
            id: format!("s{n}"),
            utterances: (1..=n).map(|i| Utterance::new(format!("u{i}")).unwrap()).collect(),
        }
    }

    fn texts(us: &[Utterance]) -> Vec<&str> {
        us.iter().map(Utterance::as_str).collect()
    }

    #[test]
    fn last_two_turns_become_responses() {
        let pairs = augment_fine_grained(&session(4), 2);
        assert_eq!(pairs.len(), 2);
        assert_eq!(texts(&pairs[0].context), ["u1", "u2", "u3"]);
        assert_eq!(pairs[0].response.as_str(), "u4");
        assert_eq!(pairs[0].origin, PairOrigin::Original);
        assert_eq!(texts(&pairs[1].context), ["u1", "u2"]);
        assert_eq!(pairs[1].response.as_str(), "u3");
        assert_eq!(pairs[1].origin, PairOrigin::Augmented);
    }

    #[test]
    fn k_is_clamped_to_available_cut_points() {
        // the only valid cut of a two-turn session is after the first turn
        let pairs = augment_fine_grained(&session(2), 5);
        assert_eq!(pairs.len(), 1);
        assert_eq!(texts(&pairs[0].context), ["u1"]);
        assert_eq!(pairs[0].response.as_str(), "u2");
    }

    #[test]
    fn single_turn_session_yields_nothing() {
        assert!(augment_fine_grained(&session(1), 3).is_empty());
    }

    #[test]
    fn train_set_sizes() {
        let sessions = vec![session(6), session(6)];
        assert_eq!(build_train_set(&sessions, 5).len(), 10);
        assert_eq!(build_train_set(&sessions, 1).len(), 2);
        assert!(build_train_set(&[], 5).is_empty());
    }

    proptest! {
        #[test]
        fn pair_count_and_prefix_property(m in 1usize..12, k in 1usize..10) {
            let s = session(m);
            let pairs = augment_fine_grained(&s, k);
            let expected = if m >= 2 { k.min(m - 1) } else { 0 };
            prop_assert_eq!(pairs.len(), expected);
            for p in &pairs {
                prop_assert!(!p.context.is_empty());
                let mut joined = p.context.clone();
                joined.push(p.response.clone());
                prop_assert_eq!(&joined[..], &s.utterances[..joined.len()]);
            }
            if m >= 2 {
                let one = augment_fine_grained(&s, 1);
                prop_assert_eq!(one.len(), 1);
                prop_assert_eq!(&one[0].response, s.utterances.last().unwrap());
            }
        }
    }
}
