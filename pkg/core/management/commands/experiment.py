from ._lab import LabCommand


class Command(LabCommand):
    help = 'Run the stability sweep, propagation fit and gap reconstruction'
    command = 'experiment'
