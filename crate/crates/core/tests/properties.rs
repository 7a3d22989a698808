use npchunk_core::al::select_batch;
use npchunk_core::corpus::{
    bracket_parse, bracket_render, check_spans, emit_conll, parse_conll, ChunkSpan, ChunkTag,
    Labeling, Sentence, Token,
};
use npchunk_core::cost::{labor_time, EventKind, SessionEvent};
use npchunk_core::dsl::{apply_rule, parse_rule, parse_rule_file, MacroTable};
use npchunk_core::metrics::{f1, pr_counts};
use npchunk_core::synth::{generate, SynthConfig};
use npchunk_core::tbl::{learn_rules, Chunker, TblConfig};
use proptest::prelude::*;

const POS: [&str; 8] = ["DT", "JJ", "NN", "NNS", "VBZ", "IN", "CD", "RB"];
const WORDS: [&str; 6] = ["the", "big", "cat", "runs", "of", "3"];

fn tag() -> impl Strategy<Value = ChunkTag> {
    prop_oneof![Just(ChunkTag::I), Just(ChunkTag::O), Just(ChunkTag::B)]
}

fn tags(max: usize) -> impl Strategy<Value = Vec<ChunkTag>> {
    proptest::collection::vec(tag(), 1..max)
}

fn sentence(max: usize) -> impl Strategy<Value = Sentence> {
    proptest::collection::vec((0..WORDS.len(), 0..POS.len()), 1..max).prop_map(|t| {
        Sentence::new(
            0,
            t.into_iter()
                .map(|(w, p)| Token::new(WORDS[w], POS[p]))
                .collect(),
        )
    })
}

fn labeled(max: usize) -> impl Strategy<Value = (Sentence, Labeling)> {
    sentence(max).prop_flat_map(|s| {
        let n = s.len();
        (
            Just(s),
            proptest::collection::vec(tag(), n..=n).prop_map(Labeling::normalized),
        )
    })
}

/// Random balanced rule text built from token patterns and bracket pairs.
fn rule_text() -> impl Strategy<Value = String> {
    let token = prop_oneof![
        Just("_NN"),
        Just("_NN::+"),
        Just("_DT::?"),
        Just("_JJ::*"),
        Just("ANYTHING"),
        Just("ANYTHING*"),
        Just("_(VBZ|IN)"),
        Just("cat_"),
    ];
    let group = (0..5usize, proptest::collection::vec(token, 1..3)).prop_map(|(kind, toks)| {
        let body = toks.join(" ");
        match kind {
            0 => format!("{{ {body} }}"),
            1 => format!("[ {body} ]"),
            2 => format!("[? {body} ]?"),
            3 => format!("{{ [ {body} ] }}"),
            _ => body,
        }
    });
    proptest::collection::vec(group, 1..4).prop_map(|g| g.join(" "))
}

proptest! {
    #[test]
    fn normalized_labelings_round_trip_through_spans(raw in tags(20)) {
        let l = Labeling::normalized(raw);
        prop_assert_eq!(Labeling::normalized(l.tags().to_vec()), l.clone());
        let back = Labeling::from_spans(&l.spans(), l.len()).unwrap();
        prop_assert_eq!(back, l.clone());
        let spans = l.spans();
        prop_assert_eq!(check_spans(&spans, l.len()).unwrap(), spans);
    }

    #[test]
    fn conll_round_trip(data in proptest::collection::vec(labeled(10), 0..6)) {
        let text = emit_conll(data.iter().map(|(s, l)| (s, l)));
        let back = parse_conll(&text).unwrap();
        prop_assert_eq!(back.len(), data.len());
        for ((s, l), (bs, bl)) in data.iter().zip(&back) {
            prop_assert_eq!(&s.tokens, &bs.tokens);
            prop_assert_eq!(l, bl);
        }
    }

    #[test]
    fn bracket_round_trip((s, l) in labeled(12)) {
        let text = bracket_render(&s, &l.spans()).unwrap();
        let (back, spans) = bracket_parse(0, &text).unwrap();
        prop_assert_eq!(back.tokens, s.tokens);
        prop_assert_eq!(spans, l.spans());
    }

    #[test]
    fn f1_is_symmetric(a in tags(16), b in tags(16)) {
        let n = a.len().min(b.len());
        let a = Labeling::normalized(a[..n].to_vec()).spans();
        let b = Labeling::normalized(b[..n].to_vec()).spans();
        prop_assert_eq!(f1(&a, &b), f1(&b, &a));
        let ab = pr_counts(&a, &b);
        let ba = pr_counts(&b, &a);
        prop_assert_eq!(ab.precision(), ba.recall());
        prop_assert!((0.0..=1.0).contains(&f1(&a, &b)));
    }

    #[test]
    fn rule_output_is_always_a_valid_bracketing(text in rule_text(), (s, l) in labeled(12)) {
        let macros = MacroTable::default();
        if let Ok(rule) = parse_rule(&text, 1, &macros) {
            let out = apply_rule(&rule, &s, &l.spans());
            prop_assert_eq!(check_spans(&out, s.len()).unwrap(), out.clone());
            // Output is a deterministic function of the input.
            prop_assert_eq!(apply_rule(&rule, &s, &l.spans()), out);
        }
    }

    #[test]
    fn batch_choice_ignores_score_order(
        (scored, shuffled) in proptest::collection::vec(0u8..5, 1..40).prop_flat_map(|scores| {
            let scored: Vec<(u32, f64)> = scores.iter().enumerate().map(|(i, s)| (i as u32, *s as f64)).collect();
            (Just(scored.clone()), Just(scored).prop_shuffle())
        }),
        x in 0usize..45,
    ) {
        let a = select_batch(&scored, x);
        prop_assert_eq!(&a, &select_batch(&shuffled, x));
        prop_assert_eq!(a.len(), x.min(scored.len()));
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn machine_events_do_not_change_labor(
        gaps in proptest::collection::vec((1u32..600, 1u32..600), 0..6),
        extra in proptest::collection::vec((0u32..4000, any::<bool>()), 0..6),
    ) {
        let mut events = Vec::new();
        let mut t = 0.0;
        for (i, (work, rest)) in gaps.iter().enumerate() {
            events.push(SessionEvent::new(t, EventKind::BatchServed).with_payload(i as u64));
            t += *work as f64;
            events.push(SessionEvent::new(t, EventKind::AnnotationSubmitted).with_payload(i as u64));
            t += *rest as f64;
        }
        let expected: f64 = gaps.iter().map(|(w, _)| *w as f64).sum::<f64>() / 3600.0;
        prop_assert!((labor_time(&events) - expected).abs() < 1e-9);
        let mut noisy = events.clone();
        for (at, feedback) in extra {
            let kind = if feedback { EventKind::FeedbackViewed } else { EventKind::EvalRequested };
            noisy.push(SessionEvent::new(at as f64, kind));
        }
        noisy.sort_by(|a, b| a.seconds.total_cmp(&b.seconds));
        prop_assert!((labor_time(&noisy) - labor_time(&events)).abs() < 1e-9);
    }
}

#[test]
fn example_rule_file_parses_cleanly() {
    let text = include_str!("data/example_rules.txt");
    let program = parse_rule_file(text, &MacroTable::default()).unwrap();
    assert_eq!(program.rules.len(), 13);
}

#[test]
fn chunker_text_is_a_fixpoint_and_tolerates_headers() {
    let data = generate(&SynthConfig {
        sentences: 300,
        seed: 11,
        ..SynthConfig::default()
    });
    let chunker = learn_rules(data.iter().map(|(s, l)| (s, l)), &TblConfig::default()).unwrap();
    assert!(!chunker.rules.is_empty());
    let text = chunker.serialize();
    let back = Chunker::deserialize(&text).unwrap();
    assert_eq!(back, chunker);
    assert_eq!(back.serialize(), text);
    let with_header = format!("# seed: 0\n# rules: {}\n{text}", chunker.rules.len());
    assert_eq!(Chunker::deserialize(&with_header).unwrap(), chunker);

    // Labeling its own output changes nothing further.
    for (s, _) in data.iter().take(50) {
        let once = chunker.apply(s);
        assert_eq!(Labeling::normalized(once.tags().to_vec()), once);
    }
}

#[test]
fn span_order_is_by_start() {
    let l = Labeling::normalized(vec![ChunkTag::I, ChunkTag::B, ChunkTag::O, ChunkTag::I]);
    assert_eq!(
        l.spans(),
        vec![
            ChunkSpan::new(0, 1),
            ChunkSpan::new(1, 2),
            ChunkSpan::new(3, 4)
        ]
    );
}
