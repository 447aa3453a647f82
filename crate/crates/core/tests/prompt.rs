mod common;

use std::collections::BTreeMap;

use genbee::assets;
use genbee::corpus::span_text;
use genbee::prompt::{
    build_event_prompt, build_input, build_structural_sequence, build_target, event_slot_values, fill_template,
    literal_collision, parse_output, EventTemplate, PromptError, SlotValues, TemplateStore, STRUCTURAL_PROMPTS,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{all_bundled_prompts, event, random_event};

fn binding() -> EventTemplate {
    let roles: Vec<String> = ["Theme", "Site"].map(String::from).to_vec();
    EventTemplate::parse("Binding", "Event trigger {Trigger} <SEP> {Role_Theme} binds at {Role_Site}.", Some(&roles))
        .unwrap()
}

#[test]
fn grammar() {
    let ok = |t: &str| EventTemplate::parse("X", t, None);
    assert!(ok("Event trigger {Trigger} <SEP> {Role_A} and {ROLE_B}.").is_ok());
    assert_eq!(ok("Event trigger {Trigger} <SEP> of {ROLE_B}").unwrap().roles(), ["B"]);
    assert!(ok("Event trigger <SEP> {Role_A}").is_err());
    assert!(ok("{Trigger} {Trigger} <SEP>").is_err());
    assert!(ok("Event trigger {Trigger} of {Role_A}").is_err());
    assert!(ok("Event trigger {Trigger} <SEP> {Role_A}{Role_B}").is_err());
    assert!(ok("Event trigger {Trigger} <SEP> {Role_A} {Role_B}").is_err());
    assert!(ok("Event trigger {Trigger} <SEP> {Role_A} and {Role_A}").is_err());
    assert!(ok("Event trigger {Trigger} <SEP> {Thing}").is_err());
    assert!(ok("Event trigger {Trigger} <SEP> {Role_A").is_err());
    let roles = vec!["A".to_string()];
    assert!(EventTemplate::parse("X", "Event trigger {Trigger} <SEP> {Role_B}", Some(&roles)).is_err());
}

#[test]
fn fig1_fill_and_parse() {
    let ctx = "TCF-1 alpha can bind to promoters .";
    let ev = event(ctx, "Binding", "bind", &[("Theme", "TCF-1 alpha"), ("Site", "promoters")]);
    let t = binding();
    let filled = fill_template(&t, Some(&ev), ctx).unwrap();
    assert_eq!(filled, "Event trigger bind <SEP> TCF-1 alpha binds at promoters.");
    let parsed = parse_output(&t, &filled);
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0].trigger.as_deref(), Some("bind"));
    assert_eq!(parsed[0].arguments["Theme"], "TCF-1 alpha");
    assert_eq!(parsed[0].arguments["Site"], "promoters");
}

#[test]
fn unfilled_slots_mean_no_prediction() {
    let t = binding();
    assert!(parse_output(&t, t.text()).iter().all(|p| p.trigger.is_none() && p.arguments.is_empty()));
    let partial = "Event trigger bind <SEP> {Role_Theme} binds at promoters.";
    let p = &parse_output(&t, partial)[0];
    assert_eq!(p.trigger.as_deref(), Some("bind"));
    assert_eq!(p.arguments.len(), 1);
    assert_eq!(p.arguments["Site"], "promoters");
    assert!(parse_output(&t, "completely unrelated words").is_empty());
    assert!(parse_output(&t, "").is_empty());
}

#[test]
fn targets_join_instances_in_trigger_order() {
    let ctx = "A binds B ; C binds D .";
    let late = genbee::corpus::EventMention {
        trigger: genbee::corpus::Span::new(14, 19),
        ..event(ctx, "Binding", "binds", &[("Theme", "D")])
    };
    let early = event(ctx, "Binding", "binds", &[("Theme", "A")]);
    let t = binding();
    let target = build_target(&t, &[&late, &early], ctx).unwrap();
    assert_eq!(
        target,
        "Event trigger binds <SEP> A binds at {Role_Site}. <EVT> Event trigger binds <SEP> D binds at {Role_Site}."
    );
    let parsed = parse_output(&t, &target);
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[1].arguments["Theme"], "D");
    assert_eq!(build_target(&t, &[], ctx).unwrap(), t.text());
}

#[test]
fn fill_rejects_bad_events() {
    let ctx = "A binds B .";
    let t = binding();
    let wrong_type = event(ctx, "Phosphorylation", "binds", &[]);
    assert!(matches!(fill_template(&t, Some(&wrong_type), ctx), Err(PromptError::TypeMismatch { .. })));
    let bad_role = event(ctx, "Binding", "binds", &[("Cause", "A")]);
    assert!(matches!(fill_template(&t, Some(&bad_role), ctx), Err(PromptError::RoleNotInTemplate { .. })));
    let twice = event(ctx, "Binding", "binds", &[("Theme", "A"), ("Theme", "B")]);
    assert!(matches!(fill_template(&t, Some(&twice), ctx), Err(PromptError::DuplicateRole { .. })));
}

#[test]
fn collisions_are_detected() {
    let t = binding();
    let vals = |theme: &str| SlotValues { trigger: Some("bind".into()), roles: BTreeMap::from([("Theme".into(), theme.into())]) };
    assert_eq!(literal_collision(&t, &vals("TCF-1")), None);
    assert_eq!(literal_collision(&t, &vals("X binds at Y")).as_deref(), Some("Theme"));
    assert_eq!(literal_collision(&t, &vals("{Role_Theme}")).as_deref(), Some("Theme"));
    assert_eq!(literal_collision(&t, &vals("a <EVT> b")).as_deref(), Some("Theme"));
    let trig = SlotValues { trigger: Some("x <SEP> y".into()), roles: BTreeMap::new() };
    assert_eq!(literal_collision(&t, &trig).as_deref(), Some("Trigger"));
    // Fusing with the neighbouring literal changes tokenization.
    let t = EventTemplate::parse("X", "Event trigger {Trigger} <SEP> see {Role_A}> end", None).unwrap();
    let fused = SlotValues { trigger: Some("x".into()), roles: BTreeMap::from([("A".into(), "<EOS".into())]) };
    assert_eq!(literal_collision(&t, &fused).as_deref(), Some("A"));
}

#[test]
fn prompts_and_inputs() {
    let onto = assets::ge11_ontology();
    let store = assets::ge11_templates();
    let p = build_event_prompt("Binding", &onto, &store).unwrap();
    assert_eq!(
        p.template.text(),
        "Event trigger {Trigger} <SEP> {Role_Theme} at binding site {Role_Site} and {Role_Theme2} at adjacent site \
         {Role_Site2} form a complex, assisted by {Role_Theme3} and {Role_Theme4}."
    );
    let input = build_input(&p, "STAT3 binds DNA .");
    assert!(input.starts_with("Binding . "));
    assert!(input.ends_with(" [SEP] STAT3 binds DNA ."));
    let missing = build_event_prompt("Binding", &onto, &TemplateStore::new("ge11")).unwrap_err();
    assert!(missing.to_string().contains("gen-templates"));
}

#[test]
fn structural_sequence() {
    let s = build_structural_sequence("Binding");
    assert!(s.starts_with("[CLS] "));
    assert_eq!(s.matches("[SEP]").count(), STRUCTURAL_PROMPTS.len());
    assert!(!s.contains("<T>"));
    assert_eq!(s.matches("Binding").count(), STRUCTURAL_PROMPTS.iter().map(|p| p.matches("<T>").count()).sum::<usize>());
}

#[test]
fn bundled_templates_parse_their_own_fills() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in all_bundled_prompts() {
        for _ in 0..20 {
            let (ctx, ev) = random_event(&mut rng, &p);
            let vals = event_slot_values(&p.template, &ev, &ctx).unwrap();
            if literal_collision(&p.template, &vals).is_some() {
                continue;
            }
            let parsed = parse_output(&p.template, &fill_template(&p.template, Some(&ev), &ctx).unwrap());
            assert_eq!(parsed.len(), 1);
            assert_eq!(parsed[0].trigger.as_deref(), span_text(&ctx, ev.trigger));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_unless_collision(seed in any::<u64>(), which in 0usize..12) {
        let prompts = all_bundled_prompts();
        let p = &prompts[which % prompts.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ctx, ev) = random_event(&mut rng, p);
        let vals = event_slot_values(&p.template, &ev, &ctx).unwrap();
        prop_assume!(literal_collision(&p.template, &vals).is_none());
        let parsed = parse_output(&p.template, &fill_template(&p.template, Some(&ev), &ctx).unwrap());
        prop_assert_eq!(parsed.len(), 1);
        prop_assert_eq!(&parsed[0].trigger, &vals.trigger);
        prop_assert_eq!(&parsed[0].arguments, &vals.roles);
    }

    #[test]
    fn parse_never_panics(text in "[a-zA-Z {}<>_.]{0,60}") {
        let _ = parse_output(&binding(), &text);
    }
}
