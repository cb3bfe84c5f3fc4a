from ._lab import LabCommand


class Command(LabCommand):
    help = 'Run every pipeline stage and write the full artifact set'
    command = 'run'
