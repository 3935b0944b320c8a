"""Regenerate the bundled toy dataset and alert streams (deterministic)."""
import csv
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "dresnet_ids" / "data"
COLUMNS = ["dur", "proto", "service", "spkts", "dpkts", "sbytes", "dbytes", "rate", "attack_cat"]

# per class: (dur, spkts, dpkts, sbytes, dbytes, rate) means, protocol mix, service mix
PROFILES = {
    "normal": ((1.0, 20, 18, 2000, 9000, 50), ["tcp", "udp"], ["http", "dns", "-"]),
    "ddos": ((0.05, 200, 2, 40000, 100, 4000), ["udp", "tcp"], ["-"]),
    "scanning": ((0.01, 2, 1, 120, 60, 900), ["tcp"], ["-", "http"]),
    "xss": ((2.5, 12, 10, 6000, 1500, 20), ["tcp"], ["http"]),
}


def rows(rng, per_class):
    out = []
    for label, (means, protos, services) in PROFILES.items():
        for _ in range(per_class):
            vals = [m * rng.uniform(0.8, 1.2) for m in means]
            out.append([
                f"{vals[0]:.4f}", rng.choice(protos), rng.choice(services),
                str(int(vals[1])), str(int(vals[2])), str(int(vals[3])), str(int(vals[4])),
                f"{vals[5]:.2f}", label,
            ])
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def write(path, header, body):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(body)


def main():
    rng = np.random.default_rng(2020)
    train = rows(rng, 24)
    # exercise the cleaning step: two exact duplicates and one row with a hole
    train += [list(train[0]), list(train[5])]
    holed = list(train[1])
    holed[3] = ""
    train.append(holed)
    write(OUT / "toy_train.csv", COLUMNS, train)
    write(OUT / "toy_test.csv", COLUMNS, rows(rng, 10))

    # five ddos attacks; three seen on all layers within 1000 time units
    base = [0, 100_000, 200_000, 300_000, 400_000]
    edge = [(t, "ddos", f"e{i}") for i, t in enumerate(base)]
    fog = [(t + 300, "ddos", f"f{i}") for i, t in enumerate(base[:3] + base[4:])]
    cloud = [(t + 700, "ddos", f"c{i}") for i, t in enumerate(base[:3])]
    for name, alerts in (("edge", edge), ("fog", fog), ("cloud", cloud)):
        write(OUT / f"toy_{name}_alerts.csv", ["layer", "timestamp", "class", "record_id"],
              [[name, t, c, r] for t, c, r in alerts])


if __name__ == "__main__":
    main()
