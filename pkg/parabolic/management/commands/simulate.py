from parabolic.runner import RunCommand


class Command(RunCommand):
    help = 'Forward solve under a constant admissible control'
    command = 'simulate'
