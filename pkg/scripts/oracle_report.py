"""Dynamic-programming values of the optimal policy and all fixed sequences."""

import json

from _common import parser, setup

from censored_qlearning.oracle import write_oracle_report


def main():
    args = parser(__doc__, reps=1).parse_args()
    out = setup(args, "oracle")
    report = write_oracle_report(out / "oracle.json")
    print(json.dumps({"optimal": report["optimal"]["value_months"],
                      **{k: v["value_months"] for k, v in report["fixed_sequences"].items()}}, indent=2))


if __name__ == "__main__":
    main()
