#!/usr/bin/env python3
"""Writes the sample datasets and plans in this directory.

  design_scenarios.jsonl        50 design scenarios, 6 options, 4 annotators each
  deliberation_scenarios.jsonl  10 open/binary questions, 8 clustered comments each
  plan_design.json              full team + random pair per scenario, 3 iterations
  plan_deliberation.json        one comment per cluster, 5 replications
  critiques.txt                 example refinement critiques
  judge_pairs.json              summary pairs for the judge subcommand
"""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
rng = random.Random(7)

BRANDS = ["Lumen Coffee", "Harbor Bank", "Pine Trail Outfitters", "Nova Fitness", "Orchid Spa",
          "Atlas Movers", "Beacon Books", "Cedar Dental", "Drift Surf Co", "Echo Audio"]
FORMATS = ["Instagram ad", "poster", "landing-page hero", "email banner", "billboard"]
QUALITIES = ["bold and colorful", "clean layout with clear hierarchy", "warm palette fits the brand",
             "typography feels dated", "product is hard to see", "too busy for the format",
             "strong call to action", "background competes with the headline",
             "elegant but low contrast", "playful tone matches the audience"]
DESIGNERS = ["Avery", "Blake", "Casey", "Devon", "Emerson", "Finley", "Harper", "Jordan"]


def design_scenario(i):
    brand = BRANDS[i % len(BRANDS)]
    fmt = FORMATS[(i // len(BRANDS)) % len(FORMATS)]
    sid = f"design{i + 1:02d}"
    options = [{"option_number": n, "media_uri": f"media/{sid}/option-{n}.png", "origin": {"kind": "seed"}}
               for n in range(1, 7)]
    pool = []
    names = rng.sample(DESIGNERS, 4)
    for k, name in enumerate(names):
        order = list(range(1, 7))
        rng.shuffle(order)
        opinions = {str(opt): {"rank": rank, "justification": rng.choice(QUALITIES)}
                    for rank, opt in enumerate(order, start=1)}
        pool.append({"participant_id": f"{sid}-d{k + 1}", "display_name": name,
                     "option_opinions": opinions, "cluster_label": f"c{k + 1}"})
    return {"scenario_id": sid,
            "context": {"context_id": sid, "kind": "design",
                        "prompt_text": f"{brand} needs a {fmt} announcing its seasonal launch. "
                                       "The audience is young professionals; keep the brand colors.",
                        "options": options},
            "evidence_pool": pool}


QUESTIONS = [
    ("open_qa", "How has AI changed the way you look for information?"),
    ("binary_qa", "Should cities ban cars from their historic centers?"),
    ("open_qa", "What should schools teach about personal finance?"),
    ("binary_qa", "Should voting be mandatory?"),
    ("open_qa", "How should remote work change office design?"),
    ("binary_qa", "Should social media require age verification?"),
    ("open_qa", "What makes a neighborhood feel safe?"),
    ("binary_qa", "Should public transport be free?"),
    ("open_qa", "How should libraries evolve in the next decade?"),
    ("binary_qa", "Should homework be abolished in primary school?"),
]
STANCES = ["I strongly support this because it helps people who are usually left out.",
           "I am against it; the costs fall on those who can least afford them.",
           "It depends on implementation, and pilots should come first.",
           "AI replaced search for me, but I double-check anything important.",
           "The current approach works and changing it adds risk.",
           "We should listen to local communities before deciding.",
           "Evidence from other countries suggests it works well.",
           "My main worry is privacy and who controls the data."]


def deliberation_scenario(i):
    kind, question = QUESTIONS[i]
    sid = f"question{i + 1:02d}"
    pool = []
    for k in range(8):
        pool.append({"participant_id": f"{sid}-p{k + 1}", "display_name": f"Participant {k + 1}",
                     "comment_text": rng.choice(STANCES), "cluster_label": f"cluster{k % 4 + 1}"})
    return {"scenario_id": sid,
            "context": {"context_id": sid, "kind": kind, "prompt_text": question, "options": []},
            "evidence_pool": pool}


def dump_jsonl(name, rows):
    with open(os.path.join(HERE, name), "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def dump_json(name, obj):
    with open(os.path.join(HERE, name), "w") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False)
        f.write("\n")


def main():
    dump_jsonl("design_scenarios.jsonl", [design_scenario(i) for i in range(50)])
    dump_jsonl("deliberation_scenarios.jsonl", [deliberation_scenario(i) for i in range(10)])
    dump_json("plan_design.json", {
        "scenarios": "design_scenarios.jsonl",
        "team_policies": [{"kind": "full"}, {"kind": "random_subset", "size": 2, "seed": 11}],
        "replications": 1,
        "seed": 2025,
        "session_config": {"turns_per_agent": 2, "max_iterations": 3, "temperature": 1.0,
                           "model_id": "gpt-4o", "narrowing_schedule": [3, 2]}})
    dump_json("plan_deliberation.json", {
        "scenarios": "deliberation_scenarios.jsonl",
        "team_policies": [{"kind": "one_per_cluster", "size": 4}],
        "replications": 5,
        "seed": 2025,
        "session_config": {"turns_per_agent": 1, "max_iterations": 1, "temperature": 1.0,
                           "model_id": "gpt-4.1-mini"}})
    with open(os.path.join(HERE, "critiques.txt"), "w") as f:
        f.write("design01-d1: strengthen product visibility\n")
        f.write("design01-d2: keep the warmer palette from the second option\n")
    dump_json("judge_pairs.json", {"pairs": [
        {"dimension": dim,
         "a": f"Most participants ({60 + i}%) favour gradual change with local pilots.",
         "b": "People disagree about the proposal."}
        for i in range(10) for dim in ("Represent.", "Informative", "Neutral", "Policy")]})


if __name__ == "__main__":
    main()
