from parabolic.runner import RunCommand


class Command(RunCommand):
    help = 'Empirical audit of the structural hypotheses'
    command = 'audit'
