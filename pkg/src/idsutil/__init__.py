"""Field-level pcap anonymization and IDS utility measurement."""

__version__ = "0.1.0"

from idsutil.trace import (
    Bits,
    DataType,
    FieldPath,
    Number,
    PacketRecord,
    Protocol,
    Timestamp,
    Trace,
    filter_protocols,
    get_field,
    parse_pcap,
    set_field,
    write_pcap,
)
from idsutil.anonymizers import Algorithm, AnonymizerState
from idsutil.policy import Policy, PolicyEntry, apply_policy, parse_policy_file
from idsutil.detector import Alert, parse_snort_csv, run_mini_ids
from idsutil.metrics import FS1, FS2, ComparisonResult, FieldSet, compare

__all__ = [
    "Alert",
    "Algorithm",
    "AnonymizerState",
    "Bits",
    "ComparisonResult",
    "DataType",
    "FS1",
    "FS2",
    "FieldPath",
    "FieldSet",
    "Number",
    "PacketRecord",
    "Policy",
    "PolicyEntry",
    "Protocol",
    "Timestamp",
    "Trace",
    "apply_policy",
    "compare",
    "filter_protocols",
    "get_field",
    "parse_pcap",
    "parse_policy_file",
    "parse_snort_csv",
    "run_mini_ids",
    "set_field",
    "write_pcap",
]
