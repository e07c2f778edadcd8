"""Writes tests/data/synthetic_project.csv: 50 valid tasks plus 4 rows the filter drops."""
import csv
import datetime as dt
import pathlib
import random

COMPONENTS = {
    "login": (["login", "password", "session", "token", "auth"], [1, 2, 2, 3]),
    "export": (["export", "csv", "report", "download", "columns"], [3, 5, 5, 8]),
    "search": (["search", "index", "query", "ranking", "filter"], [5, 8, 8, 13]),
    "ui": (["button", "layout", "color", "tooltip", "icon"], [0.5, 1, 1, 2]),
    "sync": (["sync", "replication", "conflict", "merge", "offline"], [8, 13, 13, 21]),
}
VERBS = ["fix", "add", "update", "remove", "improve"]
FILLER = ["when", "the", "user", "opens", "page", "after", "restart", "with", "large", "data"]


def sp_text(sp):
    return str(int(sp)) if float(sp).is_integer() else str(sp)


def main():
    rng = random.Random(7)
    start = dt.datetime(2021, 3, 1, 9, 0, 0)
    rows = []
    names = sorted(COMPONENTS)
    for i in range(50):
        comp = names[rng.randrange(len(names))]
        words, sps = COMPONENTS[comp]
        title = f"{rng.choice(VERBS)} {rng.choice(words)} {rng.choice(words)}"
        desc_words = [rng.choice(words) for _ in range(4)] + [rng.choice(FILLER) for _ in range(4)]
        rng.shuffle(desc_words)
        created = start + dt.timedelta(hours=13 * i)
        if i in (20, 21):  # equal timestamps: order falls back to the issue key
            created = start + dt.timedelta(hours=13 * 20)
        rows.append({
            "issuekey": f"SYN-{i + 1}",
            "created": created.strftime("%Y-%m-%dT%H:%M:%SZ"),
            "title": title,
            "description": " ".join(desc_words),
            "storypoint": sp_text(rng.choice(sps)),
        })
    late = start + dt.timedelta(days=40)
    rows.append({"issuekey": "SYN-90", "created": late.strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "title": "off scale estimate", "description": "sync merge", "storypoint": "4"})
    rows.append({"issuekey": "SYN-91", "created": late.strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "title": "no description", "description": "", "storypoint": "3"})
    rows.append({"issuekey": "SYN-92", "created": late.strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "title": "no estimate", "description": "login token", "storypoint": ""})
    rows.append({"issuekey": "SYN-93", "created": late.strftime("%Y-%m-%dT%H:%M:%SZ"),
                 "title": "only a link", "description": "https://example.org/x", "storypoint": "2"})
    rng.shuffle(rows)  # ingestion sorts by (created, issue key)

    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "synthetic_project.csv"
    with out.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["issuekey", "created", "title", "description", "storypoint"])
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
