from colorama import Fore, Style
from tabulate import tabulate

from data.models import EvalReport, RingProfile
from evaluation.metrics import round_rate

REPORT_HEADERS = ["Variant", "CCR", "Total Error", "APCER", "BPCER", "HTER", "EER", "BPCER@APCER=0.1", "BPCER@APCER=1"]


def _report_cells(report: EvalReport) -> list[str]:
    cells = [report.ccr, 100.0 - report.ccr, report.apcer, report.bpcer, report.hter, report.eer]
    cells += [report.bpcer_at_apcer.get(k, float("nan")) for k in ("0.1", "1")]
    return [f"{round_rate(v):.2f}" for v in cells]


def format_report_table(variants: dict[str, EvalReport], title: str = "") -> str:
    """Plain aligned-column table, written next to report.json."""
    rows = [[name] + _report_cells(report) for name, report in variants.items()]
    table = tabulate(rows, headers=REPORT_HEADERS, tablefmt="simple", colalign=("left",) + ("right",) * 8)
    return f"{title}\n{table}" if title else table


def print_eval_report(report: EvalReport, title: str = "EVALUATION") -> None:
    """Print one report as a colored two-column table."""
    hter_color = Fore.GREEN if report.hter <= 5.0 else Fore.YELLOW if report.hter <= 15.0 else Fore.RED
    rows = [
        ["Bona fide / Attack", f"{report.bona_fide_count} / {report.attack_count}"],
        ["CCR", f"{Fore.CYAN}{round_rate(report.ccr):.2f}%{Style.RESET_ALL}"],
        ["Total Error", f"{round_rate(100.0 - report.ccr):.2f}%"],
        ["APCER", f"{round_rate(report.apcer):.2f}%"],
        ["BPCER", f"{round_rate(report.bpcer):.2f}%"],
        ["HTER", f"{hter_color}{round_rate(report.hter):.2f}%{Style.RESET_ALL}"],
        ["EER", f"{Fore.YELLOW}{round_rate(report.eer):.2f}%{Style.RESET_ALL}"],
    ]
    if report.eer_threshold is not None:
        rows.append(["EER threshold", f"{report.eer_threshold:.4f}"])
    for target, value in report.bpcer_at_apcer.items():
        rows.append([f"BPCER @ APCER={target}%", f"{round_rate(value):.2f}%"])

    print(f"\n{Fore.WHITE}{Style.BRIGHT}{title}:{Style.RESET_ALL}")
    print(tabulate(rows, tablefmt="grid", colalign=("left", "right")))


def print_variant_table(variants: dict[str, EvalReport], main_variant: str = "", title: str = "RESULTS") -> None:
    rows = []
    for name, report in variants.items():
        label = f"{Fore.CYAN}{Style.BRIGHT}{name}{Style.RESET_ALL}" if name == main_variant else f"{Fore.CYAN}{name}{Style.RESET_ALL}"
        rows.append([label] + _report_cells(report))

    print(f"\n{Fore.WHITE}{Style.BRIGHT}{title}:{Style.RESET_ALL}")
    print(tabulate(rows, headers=[f"{Fore.WHITE}Variant"] + REPORT_HEADERS[1:], tablefmt="grid", colalign=("left",) + ("right",) * 8))


def print_ring_profile(profile: RingProfile, title: str = "RING PROFILE") -> None:
    best = profile.min_ring
    rows = []
    for i, (e, norm) in enumerate(zip(profile.eers, profile.normalized)):
        color = Fore.GREEN if i == best else Fore.WHITE
        bar = "#" * int(round((1.0 - norm) * 20))
        rows.append([f"{color}{i}{Style.RESET_ALL}", f"{color}{round_rate(e):.2f}%{Style.RESET_ALL}", f"{norm:.3f}", bar])

    print(f"\n{Fore.WHITE}{Style.BRIGHT}{title}:{Style.RESET_ALL}")
    print(tabulate(rows, headers=["Ring", "EER", "Normalized", "Informativeness"], tablefmt="grid", colalign=("right", "right", "right", "left")))
